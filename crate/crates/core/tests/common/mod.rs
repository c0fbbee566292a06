//! Oracles shared by the integration tests and the acceptance suite.

#![allow(dead_code)]

use lelsim::protection::{protection_step, ProtectionMode, ProtectionParams, ProtectionState};
use lelsim::tcl::{contrastive_loss, contrastive_loss_and_grad, Encoder, Window};
use lelsim::workload::{simulate_workload_raw, WorkloadParams};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Exactly representable step so that timers land on whole step counts.
pub const DT: f64 = 0.25;

pub struct Case {
    pub params: ProtectionParams,
    pub v: Vec<f64>,
    pub omega: Vec<f64>,
}

/// Random parameters and a random (V, ω) sequence made of violation and
/// in-band episodes of random length; values stay clear of the band edges.
pub fn random_case(rng: &mut impl Rng, steps: usize) -> Case {
    let params = ProtectionParams {
        v_ref: 1.0,
        omega_ref: 1.0,
        delta_v: rng.random_range(0.05..0.3),
        delta_omega: rng.random_range(0.002..0.02),
        t_delay_trip: DT * rng.random_range(0..6) as f64,
        t_wait_recon: DT * rng.random_range(0..6) as f64,
        t_delay_recon: DT * rng.random_range(0..10) as f64,
        kappa_min: rng.random_range(0.05..0.9),
        kappa_max: 1.0,
        r_kappa: rng.random_range(0.2..2.0),
    };
    let (mut v, mut omega) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
    let p_violation = rng.random_range(0.1..0.6);
    while v.len() < steps {
        let violate = rng.random_bool(p_violation);
        let len = rng.random_range(1..12);
        for _ in 0..len {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let (mut dv, mut dw) = (
                sign * params.delta_v * rng.random_range(0.0..0.5),
                params.delta_omega * rng.random_range(-0.5..0.5),
            );
            if violate {
                match rng.random_range(0..3) {
                    0 => dv = sign * params.delta_v * rng.random_range(1.5..3.0),
                    1 => dw = sign * params.delta_omega * rng.random_range(1.5..3.0),
                    _ => {
                        dv = -params.delta_v * rng.random_range(1.5..3.0);
                        dw = params.delta_omega * rng.random_range(1.5..3.0);
                    }
                }
            }
            v.push(params.v_ref + dv);
            omega.push(params.omega_ref + dw);
        }
    }
    v.truncate(steps);
    omega.truncate(steps);
    Case { params, v, omega }
}

/// Expected trip and ramp-start steps, found by scanning the violation flags
/// for qualifying intervals.
pub fn scan(case: &Case) -> (Vec<usize>, Vec<usize>) {
    let p = &case.params;
    let bad: Vec<bool> = case
        .v
        .iter()
        .zip(&case.omega)
        .map(|(v, w)| (v - p.v_ref).abs() > p.delta_v || (w - p.omega_ref).abs() > p.delta_omega)
        .collect();
    let steps_of = |t: f64| (t / DT).round() as usize;
    let n_trip = steps_of(p.t_delay_trip).max(1);
    let (n_wait, n_recon) = (steps_of(p.t_wait_recon), steps_of(p.t_delay_recon));
    let (mut trips, mut ramps) = (Vec::new(), Vec::new());
    // Violations can only be timed from `armed` onwards.
    let mut armed = 0;
    while let Some(trip) =
        (armed + n_trip - 1..bad.len()).find(|&k| bad[k + 1 - n_trip..=k].iter().all(|&b| b))
    {
        trips.push(trip);
        let ramp = (trip + 1..bad.len()).find(|&j| {
            let stable = (trip + 1..=j).rev().take_while(|&i| !bad[i]).count();
            !bad[j] && stable >= n_wait && j - trip >= n_recon
        });
        match ramp {
            Some(j) => {
                ramps.push(j);
                armed = j + 1;
            }
            None => break,
        }
    }
    (trips, ramps)
}

/// Runs the state machine over `case` and returns the trip and ramp-start
/// steps plus a description of any invariant violation.
pub fn replay(case: &Case) -> (Vec<usize>, Vec<usize>, Option<String>) {
    let p = &case.params;
    let mut s = ProtectionState::connected();
    let (mut trips, mut ramps, mut broken) = (Vec::new(), Vec::new(), None);
    for k in 0..case.v.len() {
        let next = protection_step(&s, case.v[k], case.omega[k], DT, p);
        let was_shed = matches!(s.mode, ProtectionMode::Shed | ProtectionMode::RecoveryWait);
        if next.mode == ProtectionMode::Shed && !was_shed {
            trips.push(k);
        }
        if next.mode == ProtectionMode::Ramping && was_shed {
            ramps.push(k);
        }
        let problem = if !(p.kappa_min..=1.0).contains(&next.kappa) {
            Some("kappa left [kappa_min, 1]")
        } else if next.kappa - s.kappa > p.r_kappa * DT + 1e-12 {
            Some("ramp rate exceeded")
        } else if next.mode == ProtectionMode::Connected && next.kappa != 1.0 {
            Some("connected below full retention")
        } else {
            None
        };
        if broken.is_none() {
            broken = problem.map(|m| format!("{m} at step {k}"));
        }
        s = next;
    }
    (trips, ramps, broken)
}

/// Number of random cases on which the state machine disagrees with the
/// oracle or breaks an invariant.
pub fn protection_counterexamples(cases: usize, steps: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .filter(|_| {
            let case = random_case(&mut rng, steps);
            let (trips, ramps) = scan(&case);
            let (got_trips, got_ramps, broken) = replay(&case);
            trips != got_trips || ramps != got_ramps || broken.is_some()
        })
        .count()
}

/// Largest relative error between the analytic encoder gradient and central
/// differences of the loss, over `coords` random parameters of a
/// `(L·C = 5) → 8 → 4` network.
pub fn gradient_check(seed: u64, coords: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = Encoder::<f64>::xavier(5, 1, 8, 4, seed);
    let window = |rng: &mut ChaCha8Rng| Window {
        samples: (0..5).map(|_| rng.random_range(-2.0..2.0)).collect(),
        len: 5,
        channels: 1,
        origin_index: 0,
    };
    let v1: Vec<Window> = (0..6).map(|_| window(&mut rng)).collect();
    let v2: Vec<Window> = (0..6).map(|_| window(&mut rng)).collect();
    let tau = 0.5;
    let (_, grad) = contrastive_loss_and_grad(&enc, &v1, &v2, tau).unwrap();
    let loss = |e: &Encoder| {
        contrastive_loss(
            &e.encode_all(&v1).unwrap(),
            &e.encode_all(&v2).unwrap(),
            tau,
        )
        .unwrap()
    };

    let sizes = [enc.w1.len(), enc.b1.len(), enc.w2.len(), enc.b2.len()];
    let total: usize = sizes.iter().sum();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let mut idx = rng.random_range(0..total);
        let mut block = 0;
        while idx >= sizes[block] {
            idx -= sizes[block];
            block += 1;
        }
        let analytic = [&grad.w1, &grad.b1, &grad.w2, &grad.b2][block][idx];
        let (mut plus, mut minus) = (enc.clone(), enc.clone());
        *slot(&mut plus, block, idx) += h;
        *slot(&mut minus, block, idx) -= h;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8));
    }
    worst
}

fn slot(e: &mut Encoder, block: usize, idx: usize) -> &mut f64 {
    match block {
        0 => &mut e.w1[idx],
        1 => &mut e.b1[idx],
        2 => &mut e.w2[idx],
        _ => &mut e.b2[idx],
    }
}

/// Long-run mean of η, its batch-means standard error and the stationary
/// mean `μ_η + λ·E[A]`.
pub fn ou_stationary_mean(
    params: &WorkloadParams,
    steps: usize,
    dt: f64,
    seed: u64,
) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let run = simulate_workload_raw(params, params.mu_eta, steps, dt, &mut rng).unwrap();
    let batches = 100;
    let size = steps / batches;
    let means: Vec<f64> = run
        .eta
        .chunks_exact(size)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
    (
        mean,
        (var / means.len() as f64).sqrt(),
        params.stationary_mean(),
    )
}

/// Textbook dynamic-programming DTW with absolute-difference cost.
pub fn dtw_reference(a: &[f64], b: &[f64]) -> f64 {
    let mut d = vec![vec![f64::INFINITY; b.len() + 1]; a.len() + 1];
    d[0][0] = 0.0;
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            d[i][j] =
                (a[i - 1] - b[j - 1]).abs() + d[i - 1][j].min(d[i][j - 1]).min(d[i - 1][j - 1]);
        }
    }
    d[a.len()][b.len()]
}
