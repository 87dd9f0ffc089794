use std::path::Path;
use std::process::{Command, Output};

use comp_energy::harness::{Algorithm, ExperimentConfig};

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comp-energy"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["sweep", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(cli(&[], dir.path()).status.code(), Some(1));
    assert_eq!(cli(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(cli(&["--version"], dir.path()).status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["sweep", "--config", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    let out = cli(
        &["sweep", "--config", "battery", "--algos", "twet,nope"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_csv_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        name: "small".into(),
        grid: vec![40.0, 80.0],
        num_seeds: 2,
        num_intervals: 2,
        warmup_intervals: 1,
        ..ExperimentConfig::battery_sweep()
    };
    std::fs::write(dir.path().join("small.json"), cfg.to_json()).unwrap();
    let out = cli(
        &[
            "sweep",
            "--config",
            "small.json",
            "--out",
            "results",
            "--algos",
            "heu,twet",
            "--jobs",
            "2",
        ],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let results = dir.path().join("results");
    for f in [
        "small.csv",
        "small.svg",
        "small_summary.csv",
        "small.runs.json",
    ] {
        assert!(results.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(results.join("small.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn trace_generation_feeds_single_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        &[
            "gen-trace",
            "--seed",
            "5",
            "--intervals",
            "3",
            "--out",
            "t.json",
        ],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let algos = [Algorithm::Twet, Algorithm::Heu, Algorithm::Offline]
        .map(|a| a.name())
        .join(",");
    let out = cli(
        &["run", "--trace", "t.json", "--algos", &algos, "--out", "m"],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 3);
    assert!(dir.path().join("m/offline.json").exists());
}

#[test]
fn quick_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["verify", "--quick", "--seed", "2"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("5/5 checks passed"));
}
