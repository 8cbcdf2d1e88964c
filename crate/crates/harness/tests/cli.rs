use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use alr_harness::ExperimentConfig;

fn bench(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alr-bench")).args(args).arg("--out").arg(out).output().expect("binary runs")
}

#[test]
fn run_writes_traces_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(&["run", "--method", "adam", "--problem", "quadratic", "--iters", "50", "--replicates", "2", "--snapshot-every", "5"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trace-000.csv", "trace-000.json", "trace-001.csv", "trace-001.json", "summary.json"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let csv = fs::read_to_string(dir.path().join("trace-000.csv")).unwrap();
    assert!(csv.starts_with("t,loss,grad_norm_sq,eta_t,alr_min,alr_p25,alr_median,alr_p75,alr_max,z_residual\n"));
    // header, T rows and the final iterate
    assert_eq!(csv.lines().count(), 52);

    // the recorded config reproduces the run
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let cfg: ExperimentConfig = serde_json::from_value(summary["config"].clone()).unwrap();
    assert_eq!(cfg.iters, 50);
    assert_eq!(cfg.replicates, 2);
}

#[test]
fn divergence_exits_two_with_marker() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(&["run", "--method", "sgd", "--problem", "rosenbrock", "--eta", "10", "--iters", "100"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("trace-000.json")).unwrap()).unwrap();
    assert_eq!(side["diverged"], serde_json::Value::Bool(true));
    assert!(side["diverged_at"].as_u64().is_some());
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bench(&["run", "--method", "nadam"], dir.path()).status.code(), Some(1));
    assert_eq!(bench(&["run", "--method", "adam", "--problem", "nope"], dir.path()).status.code(), Some(1));
    assert_eq!(bench(&["run", "--method", "adam", "--beta1", "1.5"], dir.path()).status.code(), Some(1));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"method\": \"adam\"}").unwrap();
    assert_eq!(bench(&["run", "--config", bad.to_str().unwrap()], dir.path()).status.code(), Some(1));
}

#[test]
fn config_file_round_trips_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    assert_eq!(bench(&["run", "--method", "sadam", "--problem", "logistic", "--iters", "40", "--sigma", "0.1"], &first).status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(first.join("summary.json")).unwrap()).unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, serde_json::to_string(&summary["config"]).unwrap()).unwrap();
    assert_eq!(bench(&["run", "--config", cfg_path.to_str().unwrap()], &first).status.code(), Some(0));
    let again = fs::read(first.join("trace-000.csv")).unwrap();
    let second = dir.path().join("second");
    assert_eq!(bench(&["run", "--config", cfg_path.to_str().unwrap()], &second).status.code(), Some(0));
    assert_eq!(again, fs::read(second.join("trace-000.csv")).unwrap());
}

#[test]
fn grid_rate_and_compare_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let lattice = dir.path().join("lattice.json");
    fs::write(&lattice, r#"{"eta":[100.0,0.1],"beta1":[0.9],"beta2":[0.999],"beta":[50.0]}"#).unwrap();
    let grid = dir.path().join("grid");
    let out = bench(&["grid", "--method", "sgd", "--problem", "rosenbrock", "--iters", "50", "--lattice", lattice.to_str().unwrap()], &grid);
    assert_eq!(out.status.code(), Some(0));
    let table = fs::read_to_string(grid.join("grid.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[2].ends_with("true"), "diverged cell ranked last: {}", rows[2]);

    let rate = dir.path().join("rate");
    let out = bench(&["rate", "--method", "adam", "--problem", "quadratic", "--t-grid", "10,100,1000", "--c", "0.5", "--sigma", "0.1"], &rate);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(rate.join("rate.csv").exists());

    let cmp = dir.path().join("cmp");
    let out = bench(&["compare", "--methods", "adam,sadam", "--problem", "mlp", "--iters", "30", "--replicates", "2"], &cmp);
    assert_eq!(out.status.code(), Some(0));
    let table = fs::read_to_string(cmp.join("compare.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
}
