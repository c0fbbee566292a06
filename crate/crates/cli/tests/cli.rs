use std::fs;
use std::path::Path;

use lelsim::io::read_trace;
use lelsim_cli::run;

fn lelsim(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let argv = std::iter::once("lelsim").chain(args.iter().copied());
    let code = run(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn metrics_of_a_trace_with_itself() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let (code, _) = lelsim(&[
        "simulate-load",
        "--horizon",
        "600",
        "--seed",
        "4",
        "--out",
        path(&a),
    ]);
    assert_eq!(code, 0);
    let (code, report) = lelsim(&["metrics", path(&a), path(&a)]);
    assert_eq!(code, 0);
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("channel,dtw,max_xcorr,cosine"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "p_work");
    assert_eq!(row[1].parse::<f64>().unwrap(), 0.0);
    assert!((row[3].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn quiet_grid_run_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = lelsim(&[
        "grid-sim",
        "toy9",
        "--no-events",
        "--horizon",
        "2",
        "--dt",
        "0.01",
        "--out-dir",
        path(dir.path()),
    ]);
    assert_eq!(code, 0);
    let trace = read_trace(&dir.path().join("sim.csv"), &["v_5", "omega_1"]).unwrap();
    for c in &trace.channels {
        let first = c.values[0];
        assert!(
            c.values.iter().all(|v| (v - first).abs() < 1e-6),
            "{} drifts",
            c.name
        );
    }
    let events = fs::read_to_string(dir.path().join("sim_events.csv")).unwrap();
    assert_eq!(events.lines().count(), 1);
}

#[test]
fn unknown_flags_and_bad_input_exit_with_one() {
    assert_eq!(lelsim(&["metrics", "--bogus"]).0, 1);
    assert_eq!(lelsim(&["no-such-command"]).0, 1);
    assert_eq!(
        lelsim(&["metrics", "/nonexistent/a.csv", "/nonexistent/b.csv"]).0,
        1
    );
    assert_eq!(
        lelsim(&["grid-sim", "toy9", "--dt", "0", "--no-events"]).0,
        1
    );
    assert_eq!(lelsim(&["--help"]).0, 0);
}

#[test]
fn collapse_writes_partial_results_and_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.toml");
    // a bolted fault that is never cleared
    fs::write(
        &scenario,
        "case = \"toy9\"\n[solver]\ndt = 0.01\nhorizon = 10.0\n[[events]]\ntime = 0.5\nkind = \"fault\"\nbus = 8\n",
    )
    .unwrap();
    let (code, _) = lelsim(&["grid-sim", path(&scenario), "--out-dir", path(dir.path())]);
    assert_eq!(code, 2);
    let trace = read_trace(&dir.path().join("sim.csv"), &[]).unwrap();
    assert!(trace.len() < 1000);
}

#[test]
fn outputs_are_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let run_once = |stem: &str| {
        let (code, _) = lelsim(&[
            "grid-sim",
            "toy9",
            "--k",
            "2",
            "--seed",
            "3",
            "--horizon",
            "6",
            "--dt",
            "0.01",
            "--out-dir",
            path(dir.path()),
            "--stem",
            stem,
        ]);
        assert_eq!(code, 0);
        (
            fs::read(dir.path().join(format!("{stem}.csv"))).unwrap(),
            fs::read(dir.path().join(format!("{stem}_events.csv"))).unwrap(),
        )
    };
    assert_eq!(run_once("a"), run_once("b"));

    let load = |name: &str| {
        let p = dir.path().join(name);
        let (code, _) = lelsim(&[
            "simulate-load",
            "--block",
            "all",
            "--horizon",
            "300",
            "--seed",
            "9",
            "--out",
            path(&p),
        ]);
        assert_eq!(code, 0);
        fs::read(p).unwrap()
    };
    assert_eq!(load("x.csv"), load("y.csv"));
}

#[test]
fn calibrate_writes_exchange_file_and_objective() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    assert_eq!(
        lelsim(&[
            "simulate-load",
            "--horizon",
            "400",
            "--seed",
            "2",
            "--out",
            path(&data)
        ])
        .0,
        0
    );
    let (code, summary) = lelsim(&[
        "calibrate",
        path(&data),
        "--max-evals",
        "15",
        "--epochs",
        "2",
        "--dim",
        "8",
        "--hidden",
        "16",
        "--seed",
        "5",
        "--out-dir",
        path(dir.path()),
    ]);
    assert_eq!(code, 0, "{summary}");
    assert!(summary.starts_with("parameter,initial,calibrated\ntau_eta,"));
    let text = fs::read_to_string(dir.path().join("calibrated.toml")).unwrap();
    lelsim::lel::from_exchange_str::<f64>(&text).unwrap();
    let objective = fs::read_to_string(dir.path().join("objective.csv")).unwrap();
    let values: Vec<f64> = objective
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn tcl_sweep_emits_one_row_per_grid_point() {
    let (code, csv) = lelsim(&[
        "sweep-tcl",
        "--L",
        "3,5,10",
        "--d",
        "16,64,256",
        "--horizon",
        "200",
        "--epochs",
        "1",
        "--hidden",
        "8",
        "--max-evals",
        "8",
    ]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "window_len,dim,initial_pattern_distance,final_pattern_distance,heldout_dtw"
    );
    assert_eq!(lines.len(), 10);
    assert!(lines[1].starts_with("3,16,") && lines[9].starts_with("10,256,"));
}

#[test]
fn small_k_sweep_and_robustness_run() {
    let (code, csv) = lelsim(&[
        "sweep-k",
        "--case",
        "toy9",
        "--k",
        "1,2",
        "--trials",
        "2",
        "--horizon",
        "7",
        "--dt",
        "0.01",
    ]);
    assert_eq!(code, 0);
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("k,voltage_nadir,frequency_overshoot,reconnection_delay\n1,"));

    let (code, csv) = lelsim(&[
        "robustness",
        "--inits",
        "3",
        "--horizon",
        "200",
        "--epochs",
        "1",
        "--hidden",
        "8",
        "--dim",
        "8",
        "--max-evals",
        "10",
    ]);
    assert_eq!(code, 0);
    assert!(csv.contains("# calibrated_spread="));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 4);
}
