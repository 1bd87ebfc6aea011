use std::path::Path;
use std::process::{Command, Output};

fn dsvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsvm"))
        .args(args)
        .output()
        .unwrap()
}

fn dir_arg(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn run_writes_every_artifact() {
    let d = tempfile::tempdir().unwrap();
    let out = dsvm(&["run", "--t-end", "0.1", "--out-dir", &dir_arg(d.path())]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "dataset.csv",
        "baseline.json",
        "trajectory.csv",
        "ellipses.csv",
        "plot.gp",
        "spectral.json",
        "summary.json",
    ] {
        assert!(d.path().join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["alpha"], 10.0);
}

#[test]
fn spectral_report_does_not_simulate() {
    let d = tempfile::tempdir().unwrap();
    let out = dsvm(&[
        "spectral-report",
        "--alpha",
        "2",
        "--out-dir",
        &dir_arg(d.path()),
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(d.path().join("spectral_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(v["alpha"], 2.0);
    assert_eq!(v["eigenvalues"].as_array().unwrap().len(), 40);
    assert!(!d.path().join("trajectory.csv").exists());
}

#[test]
fn config_file_and_flags_combine() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("cfg.toml");
    std::fs::write(&cfg, "n_points = 40\nseed = 4\n").unwrap();
    let out = dsvm(&[
        "gen-data",
        "--config",
        &dir_arg(&cfg),
        "--out-dir",
        &dir_arg(d.path()),
    ]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(d.path().join("dataset.csv")).unwrap();
    assert_eq!(csv.lines().count(), 41);
    let base = dsvm(&[
        "baseline",
        "--config",
        &dir_arg(&cfg),
        "--seed",
        "4",
        "--out-dir",
        &dir_arg(d.path()),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&base.stdout).unwrap();
    assert!(v["grad_norm"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn bad_input_exits_with_configuration_code() {
    let out = dsvm(&["run", "--alpha", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.toml");
    std::fs::write(&cfg, "alpah = 3.0\n").unwrap();
    let out = dsvm(&["run", "--config", &dir_arg(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpah"));
    std::fs::write(&cfg, "h = 0.003\n").unwrap();
    assert_eq!(
        dsvm(&["run", "--config", &dir_arg(&cfg)]).status.code(),
        Some(2)
    );
}

#[test]
fn divergence_exits_with_its_own_code() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("stiff.toml");
    std::fs::write(
        &cfg,
        "alpha = 1000.0\nh = 0.05\nt_end = 5.0\nswitch_period = 0.05\n",
    )
    .unwrap();
    let out = dsvm(&[
        "run",
        "--config",
        &dir_arg(&cfg),
        "--out-dir",
        &dir_arg(d.path()),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn sweep_writes_one_trajectory_per_alpha() {
    let d = tempfile::tempdir().unwrap();
    let out = dsvm(&["sweep", "--t-end", "0.1", "--out-dir", &dir_arg(d.path())]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let names: Vec<String> = std::fs::read_dir(d.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("trajectory_alpha_"))
        .collect();
    assert_eq!(names.len(), 3);
    assert!(d.path().join("sweep.json").is_file());
}
