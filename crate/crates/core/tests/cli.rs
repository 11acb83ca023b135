//! Tests of the `ptstab` binary: exit codes and output formats.

use std::process::{Command, Output};

fn ptstab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptstab")).args(args).output().expect("binary runs")
}

#[test]
fn gains_prints_json() {
    let out = ptstab(&["gains"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["b1"].as_f64().unwrap() - 32.0 / 33.0).abs() < 1e-12);
    assert_eq!(v["valid"], true);
}

#[test]
fn invalid_gains_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("g.toml");
    std::fs::write(
        &cfg,
        "[gains]\nq = [1.6666666666666667, 1.3333333333333333]\nkappa = -0.25\nk1 = 64.0\nk3 = 3.1\nk4 = 3.0\n",
    )
    .unwrap();
    let out = ptstab(&["gains", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["valid"], false);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(ptstab(&["mc", "--runs", "0"]).status.code(), Some(2));
    assert_eq!(ptstab(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ptstab(&["simulate", "--preset", "no_such_preset"]).status.code(), Some(2));
    assert_eq!(ptstab(&["simulate", "--config", "/nonexistent/ptstab.toml"]).status.code(), Some(2));
    assert_eq!(ptstab(&["mc", "--dt", "-1"]).status.code(), Some(2));
}

#[test]
fn simulate_writes_trajectory_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    let out = ptstab(&["simulate", "--preset", "noisy_integrator", "--seed", "3", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x1,u"));
    assert_eq!(lines.next().unwrap().split(',').nth(1), Some("1"));
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(&last[1..], &[0.0, 0.0]);
}

#[test]
fn mc_writes_samples_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = ptstab(&[
        "mc",
        "--preset",
        "power_drift",
        "--runs",
        "25",
        "--seed",
        "9",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let samples = std::fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    assert_eq!(samples.lines().next(), Some("run,seed,status,settling_time"));
    assert_eq!(samples.lines().count(), 26);
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    for key in [
        "mean",
        "ci_lo",
        "ci_hi",
        "n_settled",
        "n_diverged",
        "bound",
        "bound_satisfied",
        "dt",
        "eps_absorb",
        "base_seed",
    ] {
        assert!(v.get(key).is_some(), "summary lacks {key}");
    }
    assert_eq!(v["base_seed"], 9);
}

#[test]
fn unmet_bound_exits_one() {
    // Without feedback the state never leaves the neighbourhood of x0.
    let dir = tempfile::tempdir().unwrap();
    let out = ptstab(&[
        "mc",
        "--preset",
        "noisy_integrator",
        "--runs",
        "5",
        "--bound",
        "0.01",
        "--x0",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
        "--config",
        concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/zero.toml"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(v["bound_satisfied"], false);
    assert_eq!(v["censored"], true);
}

#[test]
fn certify_reports_verdicts() {
    for preset in ["noisy_integrator", "power_drift", "cascade2"] {
        let out = ptstab(&["certify", "--preset", preset]);
        assert_eq!(out.status.code(), Some(0), "{preset}");
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["verdict"], true);
        assert!(v["max_residual"].is_number());
        assert!(v["argmax_state"].is_array());
    }
}

#[test]
fn sweep_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = ptstab(&[
        "sweep",
        "--preset",
        "power_drift",
        "--runs",
        "10",
        "--bounds",
        "2,0.5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(2).unwrap().starts_with("0.5,"));
}
