//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so that a failing criterion is
//! reported without aborting the remaining ones or failing `cargo test`.
//! Set `LELSIM_ACCEPTANCE_STRICT=1` to exit non-zero when any criterion fails.

mod common;

use std::time::{Duration, Instant};

use lelsim::calibration::{
    ablation_trial, heldout_dtw, random_inits, robustness, simulate_subsystem, synthetic_trace,
    CalibrationConfig, Problem, Subsystem,
};
use lelsim::grid::sim::{run_simulation, ScheduledEvent};
use lelsim::grid::sweep::{run_trial, Regimes};
use lelsim::grid::{
    classify, fixture, penetration_sweep, place_lels, power_flow, EventSchedule, FaultScenario,
    GridEvent, SimConfig, SimResult,
};
use lelsim::lel::{archetype_defaults, Archetype};
use lelsim::metrics::{cosine_similarity, dtw_distance, dtw_raw, max_cross_correlation};
use lelsim::tcl::TclConfig;
use lelsim::workload::WorkloadParams;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Line {
    id: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn timed(id: &'static str, limit: Duration, f: impl FnOnce() -> (bool, String)) -> Line {
    let start = Instant::now();
    let (ok, detail) = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let detail = if in_time {
        detail
    } else {
        format!("{detail}; over the {:.0} s budget", limit.as_secs_f64())
    };
    let line = Line {
        id,
        pass: ok && in_time,
        detail,
        elapsed,
    };
    println!(
        "{} {:<3} [{:>7.1} s] {}",
        if line.pass { "PASS" } else { "FAIL" },
        line.id,
        line.elapsed.as_secs_f64(),
        line.detail
    );
    line
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn ou_stationarity() -> (bool, String) {
    let params = WorkloadParams {
        p_base: 10.0,
        p_full: 50.0,
        tau_eta: 10.0,
        mu_eta: 0.3,
        sigma_xi: 0.05,
        lambda_burst: 0.002,
        ln_a_mu: -3.0,
        ln_a_sigma: 0.3,
    };
    let (mean, se, expected) = common::ou_stationary_mean(&params, 1_000_000, 0.1, 1);
    let z = (mean - expected) / se;
    (
        z.abs() <= 3.0,
        format!(
            "mean {mean:.6}, expected {expected:.6}, se {se:.2e}, |z| = {:.2} <= 3",
            z.abs()
        ),
    )
}

fn gradient() -> (bool, String) {
    let err = common::gradient_check(1, 5);
    (
        err < 1e-5,
        format!("max relative error {err:.2e} < 1e-5 over 5 coordinates"),
    )
}

/// Workload calibration problem shared by the recovery and robustness
/// criteria: 2 h at 1 s from the datacenter workload.
struct WorkloadSetup {
    cfg: CalibrationConfig,
    truth: Vec<f64>,
    problem: Problem,
}

fn workload_setup() -> WorkloadSetup {
    let base = archetype_defaults(Archetype::Datacenter);
    let mut cfg = CalibrationConfig::new(Subsystem::Workload, base, 7200.0, 1.0).unwrap();
    cfg.sim_seed = 1;
    let truth = Subsystem::Workload.theta(&base);
    let data = synthetic_trace(&truth, &cfg, 100).unwrap();
    let problem = Problem::new(&data, &cfg).unwrap();
    WorkloadSetup {
        cfg,
        truth,
        problem,
    }
}

fn recovery(setup: &WorkloadSetup) -> (bool, String) {
    let heldout = simulate_subsystem(&setup.truth, &setup.cfg, 200).unwrap();
    let inits = random_inits(Subsystem::Workload, &setup.cfg.bounds, 5, 7).unwrap();
    let mut halved = 0;
    let mut improved = 0;
    let mut parts = Vec::new();
    for init in &inits {
        let r = setup.problem.calibrate(init).unwrap();
        let ratio = r.final_pattern_distance / r.initial_pattern_distance;
        let before = heldout_dtw(init, &setup.cfg, &heldout, 201).unwrap();
        let after = heldout_dtw(&r.theta_star, &setup.cfg, &heldout, 201).unwrap();
        halved += usize::from(ratio <= 0.5);
        improved += usize::from(after < before);
        parts.push(format!("{ratio:.3}/{before:.0}->{after:.0}"));
    }
    (
        halved == inits.len() && improved >= 4,
        format!(
            "distance halved in {halved}/5, held-out DTW improved in {improved}/5 (>= 4) [ratio/dtw: {}]",
            parts.join(", ")
        ),
    )
}

fn init_robustness(setup: &WorkloadSetup) -> (bool, String) {
    let inits = random_inits(Subsystem::Workload, &setup.cfg.bounds, 20, 8).unwrap();
    let report = robustness(&setup.problem, &inits).unwrap();
    let ratio = report.calibrated_spread / report.uncalibrated_spread;
    (
        ratio <= 0.5,
        format!(
            "pattern spread {:.4e} -> {:.4e}, ratio {ratio:.3} <= 0.5",
            report.uncalibrated_spread, report.calibrated_spread
        ),
    )
}

/// Reduced settings: 1 h traces, 50 encoder epochs, 200 evaluations per
/// calibration, to fit the runtime budget.
fn ablation() -> (bool, String) {
    let base = archetype_defaults(Archetype::Datacenter);
    let mut cfg = CalibrationConfig::new(Subsystem::Workload, base, 3600.0, 1.0).unwrap();
    cfg.tcl = TclConfig {
        epochs: 50,
        ..TclConfig::default()
    };
    cfg.max_evals = 200;
    let truth = Subsystem::Workload.theta(&base);
    let trials = 20u64;
    let outcomes: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let init = &random_inits(Subsystem::Workload, &cfg.bounds, 1, 300 + t).unwrap()[0];
            let c = CalibrationConfig {
                sim_seed: 5000 + t,
                encoder_seed: t,
                optimizer_seed: t,
                ..cfg.clone()
            };
            let o = ablation_trial(&truth, init, &c, 1000 + t, 2000 + t).unwrap();
            (o.pattern_dtw, o.mse_dtw)
        })
        .collect();
    let wins = outcomes.iter().filter(|(p, m)| p < m).count();
    let frac = wins as f64 / trials as f64;
    let mean = |f: fn(&(f64, f64)) -> f64| outcomes.iter().map(f).sum::<f64>() / trials as f64;
    (
        frac >= 0.7,
        format!(
            "pattern beats MSE in {wins}/{trials} = {:.0}% (>= 70%); mean held-out DTW pattern {:.1}, MSE {:.1}",
            100.0 * frac,
            mean(|o| o.0),
            mean(|o| o.1)
        ),
    )
}

fn regimes() -> (bool, String) {
    let case = fixture("ieee39").unwrap();
    let cfg = SimConfig {
        dt: 0.005,
        horizon: 20.0,
        ..Default::default()
    };
    let seeds: Vec<u64> = (0..40).collect();
    let found: Vec<Regimes> = seeds
        .par_iter()
        .map(|&s| {
            classify(&run_trial(&case, 10, s, &FaultScenario::default(), &cfg).unwrap()).unwrap()
        })
        .collect();
    let witness = |f: fn(&Regimes) -> bool| {
        seeds
            .iter()
            .zip(&found)
            .find(|(_, r)| f(r))
            .map(|(s, _)| *s)
    };
    let w = [
        ("ride_through", witness(|r| r.ride_through)),
        ("mass_disconnection", witness(|r| r.mass_disconnection)),
        ("reconnection_retrip", witness(|r| r.reconnection_retrip)),
        ("non_reconnecting", witness(|r| r.non_reconnecting)),
    ];
    let text: Vec<String> = w
        .iter()
        .map(|(name, s)| match s {
            Some(s) => format!("{name} at seed {s}"),
            None => format!("{name} missing"),
        })
        .collect();
    (
        w.iter().all(|(_, s)| s.is_some()),
        format!("seeds 0..39: {}", text.join(", ")),
    )
}

fn penetration() -> (bool, String) {
    let case = fixture("ieee39").unwrap();
    let cfg = SimConfig {
        dt: 0.005,
        horizon: 20.0,
        ..Default::default()
    };
    let rows =
        penetration_sweep(&case, &[2, 5, 10], 10, 0, &FaultScenario::default(), &cfg).unwrap();
    let overshoot_up = rows
        .windows(2)
        .all(|w| w[1].frequency_overshoot >= w[0].frequency_overshoot);
    let nadir_down = rows
        .windows(2)
        .all(|w| w[1].voltage_nadir <= w[0].voltage_nadir);
    let table: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "K={} overshoot {:.5} nadir {:.4}",
                r.k, r.frequency_overshoot, r.voltage_nadir
            )
        })
        .collect();
    (
        overshoot_up && nadir_down,
        format!(
            "overshoot non-decreasing: {overshoot_up}, nadir non-increasing: {nadir_down} [{}]",
            table.join("; ")
        ),
    )
}

fn two_bus(dt: f64) -> SimResult {
    let mut case = fixture("toy2").unwrap();
    for l in &mut case.lels {
        l.params.work.sigma_xi = 0.0;
        l.params.work.lambda_burst = 0.0;
        l.params.prot.delta_v = 10.0;
        l.params.prot.delta_omega = 10.0;
        l.params.cool.v_stall = 0.05;
    }
    let events = EventSchedule::new(vec![
        ScheduledEvent {
            time: 0.5,
            event: GridEvent::Fault {
                bus: 2,
                admittance: Complex64::new(0.0, -4.0),
            },
        },
        ScheduledEvent {
            time: 0.6,
            event: GridEvent::ClearFault { bus: 2 },
        },
    ]);
    run_simulation(
        &case,
        &events,
        &SimConfig {
            dt,
            horizon: 3.0,
            ..Default::default()
        },
    )
    .unwrap()
}

fn solver() -> (bool, String) {
    let mut case = place_lels(&fixture("ieee39").unwrap(), 10, 1, &Archetype::ALL).unwrap();
    for l in &mut case.lels {
        l.params.work.sigma_xi = 0.0;
        l.params.work.lambda_burst = 0.0;
    }
    let flat = run_simulation(&case, &EventSchedule::default(), &SimConfig::default()).unwrap();
    let drift = flat.max_frequency_deviation();

    let dt = 0.01;
    let reference = two_bus(dt / 8.0);
    let error = |r: &SimResult| {
        let stride = (r.time[1] / reference.time[1]).round() as usize;
        let mut e: f64 = 0.0;
        for k in 0..r.time.len() {
            for (a, b) in r
                .v_mag
                .iter()
                .zip(&reference.v_mag)
                .chain(r.omega.iter().zip(&reference.omega))
            {
                e = e.max((a[k] - b[k * stride]).abs());
            }
        }
        e
    };
    let ratio = error(&two_bus(dt)) / error(&two_bus(dt / 2.0));

    let case = fixture("ieee39").unwrap();
    let pf = power_flow(&case).unwrap();
    let mut rdr = csv::Reader::from_path(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/data/ieee39_pf_oracle.csv"
    ))
    .unwrap();
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let id: usize = rec[0].parse().unwrap();
        let vm: f64 = rec[1].parse().unwrap();
        let va: f64 = rec[2].parse::<f64>().unwrap().to_radians();
        worst =
            worst.max((pf.v[case.bus_index(id).unwrap()] - Complex64::from_polar(vm, va)).norm());
        rows += 1;
    }
    let ok = (
        drift < 1e-6,
        (3.5..=4.5).contains(&ratio),
        worst < 1e-6 && rows == case.buses.len(),
    );
    (
        ok.0 && ok.1 && ok.2,
        format!(
            "(a) flat 40 s drift {drift:.1e} < 1e-6: {}; (b) error ratio {ratio:.3} in [3.5, 4.5]: {}; (c) worst bus mismatch {worst:.1e} < 1e-6 over {rows} buses: {}",
            ok.0, ok.1, ok.2
        ),
    )
}

fn protection() -> (bool, String) {
    let bad = common::protection_counterexamples(10_000, 200, 9);
    (
        bad == 0,
        format!("{bad} counterexamples over 10^4 random (V, omega) sequences"),
    )
}

fn metric_identities() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(8..200);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        worst = worst
            .max(dtw_distance(&x, &x).unwrap().abs())
            .max((cosine_similarity(&x, &x).unwrap() - 1.0).abs())
            .max((max_cross_correlation(&x, &x, 0.25).unwrap() - 1.0).abs());
    }
    let hand = dtw_raw(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0]).unwrap() == 0.0
        && dtw_raw(&[0.0], &[1.0]).unwrap() == 1.0;
    (
        worst < 1e-12 && hand,
        format!("largest identity deviation {worst:.1e} < 1e-12 over 100 series; hand DTW examples exact: {hand}"),
    )
}

fn main() {
    println!(
        "acceptance: {} worker threads",
        rayon::current_num_threads()
    );
    let mut lines = vec![
        timed("1", secs(10), ou_stationarity),
        timed("2", secs(1), gradient),
    ];
    let start = Instant::now();
    let setup = workload_setup();
    let training = start.elapsed();
    println!(
        "     encoder training for criteria 3 and 4 took {:.1} s",
        training.as_secs_f64()
    );
    lines.push(timed("3", secs(300) - training, || recovery(&setup)));
    lines.push(timed("4", secs(900) - training, || init_robustness(&setup)));
    lines.push(timed("5", secs(1200), ablation));
    lines.push(timed("6", secs(1800), regimes));
    lines.push(timed("7", secs(2700), penetration));
    lines.push(timed("8", secs(600), solver));
    lines.push(timed("9", secs(60), protection));
    lines.push(timed("10", secs(10), metric_identities));

    let failed: Vec<&str> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    println!(
        "acceptance: {}/{} passed",
        lines.len() - failed.len(),
        lines.len()
    );
    if !failed.is_empty() && std::env::var_os("LELSIM_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
