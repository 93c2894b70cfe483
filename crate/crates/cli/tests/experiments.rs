use std::fs;
use std::path::Path;

use amagold::dataio::{read_run_report, read_samples};
use amagold_cli::{parse_args, run_experiment, CliError, ExperimentConfig};

fn config(out: &Path, args: &[&str]) -> ExperimentConfig {
    let mut argv = vec!["amagold".to_string(), "--out".into(), out.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    parse_args(argv).unwrap().0
}

fn heart() -> String {
    concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/heart.txt").to_string()
}

#[test]
fn single_point_sweep_has_one_summary_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        &["--experiment", "sweep", "--model", "doublewell", "--sweep", "0.1", "--rounds", "2000", "--burn-in", "200"],
    );
    let report = run_experiment(&cfg).unwrap();
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<_> = summary.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "epsilon,symmetric_kl,acceptance_rate,numerical_failures");
    assert!(lines[1].starts_with("1.0000000000000001e-1,"));
    assert!(dir.path().join("point_000/samples.csv").exists());
    assert!(report.complete);
    assert_eq!(report.accepted + report.rejected + report.out_of_domain, 2000);
}

#[test]
fn identical_configs_give_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--model", "dist1", "--rounds", "3000", "--burn-in", "300", "--seed", "9"];
    run_experiment(&config(a.path(), &args)).unwrap();
    run_experiment(&config(b.path(), &args)).unwrap();
    for name in ["samples.csv", "density.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let (rounds, rows) = read_samples(&a.path().join("samples.csv")).unwrap();
    assert_eq!(rows.len(), 2700);
    assert_eq!(rounds[0], 300);
}

#[test]
fn report_acceptance_rate_counts_every_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["--model", "doublewell", "--epsilon", "0.4", "--rounds", "4000", "--burn-in", "1000"]);
    let report = run_experiment(&cfg).unwrap();
    let total = report.accepted + report.rejected + report.out_of_domain;
    assert_eq!(total, 4000);
    assert_eq!(report.acceptance_rate, report.accepted as f64 / total as f64);
    assert!(report.acceptance_rate < 1.0);
    let on_disk = read_run_report(&dir.path().join("report.json")).unwrap();
    assert_eq!(on_disk, report);
}

#[test]
fn logistic_run_scores_against_an_oracle_reference() {
    let dir = tempfile::tempdir().unwrap();
    let oracle_dir = dir.path().join("oracle");
    let cfg = config(
        &oracle_dir,
        &["--experiment", "oracle", "--model", "logreg", "--dataset", &heart(), "--epsilon", "0.05", "--rounds", "3000", "--burn-in", "500"],
    );
    run_experiment(&cfg).unwrap();
    let reference = oracle_dir.join("reference.json");
    assert!(reference.exists());
    assert!(!oracle_dir.join("samples.csv").exists());

    let run_dir = dir.path().join("run");
    let cfg = config(
        &run_dir,
        &[
            "--model", "logreg", "--dataset", &heart(), "--minibatch", "16", "--epsilon", "1e-3",
            "--rounds", "2000", "--burn-in", "500", "--reference", reference.to_str().unwrap(),
        ],
    );
    let report = run_experiment(&cfg).unwrap();
    assert!(report.metrics["mse"].is_finite());
    assert_eq!(report.outputs["reference"], reference);
    assert_eq!(report.config["minibatch"], 16);
}

#[test]
fn failing_run_leaves_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("short.json");
    fs::write(
        &reference,
        r#"{"mean":[0.0,1.0],"sd":[1.0,1.0],"sampler":"l2mc","step_size":0.05,"rounds":10,"burn_in":1,"seed":1,"dataset":null}"#,
    )
    .unwrap();
    let cfg = config(
        dir.path(),
        &["--model", "logreg", "--dataset", &heart(), "--rounds", "100", "--burn-in", "10", "--reference", reference.to_str().unwrap()],
    );
    let err = run_experiment(&cfg).unwrap_err();
    assert!(matches!(err, CliError::Core(amagold::Error::DimensionMismatch { .. })), "{err}");
    let report = read_run_report(&dir.path().join("report.json")).unwrap();
    assert!(!report.complete);
    assert!(report.error.is_some());
    assert!(!dir.path().join("samples.csv").exists());
}

#[test]
fn tuning_run_writes_trace_and_freezes_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        &["--experiment", "tune", "--model", "doublewell", "--epsilon", "0.01", "--rounds", "6000", "--burn-in", "4000", "--tune-window", "100"],
    );
    let report = run_experiment(&cfg).unwrap();
    let trace = fs::read_to_string(dir.path().join("tuning.csv")).unwrap();
    assert_eq!(trace.lines().count(), 41);
    assert!(report.metrics["tuned_step_size"] > 0.01);
    let (_, rows) = read_samples(&dir.path().join("samples.csv")).unwrap();
    assert_eq!(rows.len(), 2000);
    assert_eq!(report.accepted + report.rejected + report.out_of_domain, 6000);
}

#[test]
fn stationarity_run_reports_ks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["--experiment", "stationarity", "--model", "doublewell", "--walkers", "500", "--epsilon", "0.15"]);
    let report = run_experiment(&cfg).unwrap();
    assert!((0.0..=1.0).contains(&report.metrics["ks_p_value"]));
    let csv = fs::read_to_string(dir.path().join("stationarity.csv")).unwrap();
    assert_eq!(csv.lines().count(), 501);
}
