mod common;

use std::path::Path;
use std::process::{Command, Output};

fn pidboost(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pidboost"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn pidboost")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = pidboost(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_series(dir: &Path) {
    let period = 24;
    let values: Vec<f64> = common::noisy(period * 40, period, 0.5, 11).iter().map(|v| v + 1.5).collect();
    common::hourly(values, period).save_csv(dir.join("s.csv")).unwrap();
}

#[test]
fn full_pipeline_produces_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_series(d);
    let common_args = ["--series", "s.csv", "--period", "24"];
    let with = |extra: &[&str]| -> Vec<String> { extra.iter().chain(&common_args).map(|s| s.to_string()).collect() };
    let run = |args: Vec<String>| ok(d, &args.iter().map(String::as_str).collect::<Vec<_>>());

    let fit = run(with(&["fit", "--model", "linear-ar", "--lags", "1-5;23-25", "--output", "m.txt"]));
    let fit: serde_json::Value = serde_json::from_str(&fit).unwrap();
    assert_eq!(fit["parameters"], 9);

    run(with(&["tune", "--model", "m.txt", "--trace", "trace.csv", "--output", "gains.txt"]));
    let trace = std::fs::read_to_string(d.join("trace.csv")).unwrap();
    assert!(trace.starts_with("kp,ki,kd,objective,rank\n"));
    assert!(std::fs::read_to_string(d.join("gains.txt")).unwrap().starts_with("kp="));

    run(with(&["backtest", "--model", "m.txt", "--gains-file", "gains.txt", "--output", "run.csv"]));
    run(with(&["backtest", "--model", "m.txt", "--no-boost", "--output", "plain.csv"]));
    let plain = std::fs::read_to_string(d.join("plain.csv")).unwrap();
    assert!(plain.starts_with("t,pv,u,p,rv,e\n"));
    assert!(plain.lines().skip(1).all(|l| l.split(',').nth(2) == Some("0")));

    run(with(&[
        "report", "--model", "m.txt", "--gains-file", "gains.txt", "--output", "report.json", "--histogram", "h.csv",
        "--errors", "e.csv",
    ]));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs[0]["label"], "unboosted");
    assert_eq!(runs[1]["label"], "boosted");
    assert_eq!(runs[1]["aic_input"]["w"].as_u64().unwrap(), runs[0]["aic_input"]["w"].as_u64().unwrap() + 3);

    run(with(&["predict", "--model", "m.txt", "--gains", "0.5,0.01,0.001", "--output", "pred.csv", "--state-out", "state.txt"]));
    let pred = std::fs::read_to_string(d.join("pred.csv")).unwrap();
    assert_eq!(pred.lines().count(), 25);
    assert!(pred.lines().nth(1).unwrap().starts_with("2020-02-10T00:00:00Z,"));
    assert!(std::fs::read_to_string(d.join("state.txt")).unwrap().starts_with("pidboost-booster v1"));
}

#[test]
fn config_file_supplies_defaults_and_cli_wins() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_series(d);
    std::fs::write(d.join("run.conf"), "# shared settings\nseries=s.csv\nperiod=24\nmodel=seasonal-naive\n").unwrap();
    let fit = ok(d, &["--config", "run.conf", "fit", "--output", "m.txt"]);
    assert!(fit.contains("\"seasonal-naive\""));
    let fit = ok(d, &["--config", "run.conf", "fit", "--model", "linear-ar", "--output", "m2.txt"]);
    assert!(fit.contains("\"linear-ar\""));
}

#[test]
fn failures_are_reported_as_json_with_category_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_series(d);

    let out = pidboost(d, &["fit", "--series", "missing.csv", "--period", "24", "--output", "m.txt"]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["category"], "io");

    let out = pidboost(d, &["fit", "--series", "s.csv", "--output", "m.txt"]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(d.join("dup.csv"), "timestamp,value\n2020-01-01T00:00:00Z,1\n2020-01-01T00:00:00Z,2\n").unwrap();
    let out = pidboost(d, &["ingest", "--input", "dup.csv", "--output", "x.csv", "--period", "2"]);
    assert_eq!(out.status.code(), Some(4));

    ok(d, &["fit", "--series", "s.csv", "--period", "24", "--model", "seasonal-naive", "--output", "m.txt"]);
    let out = pidboost(
        d,
        &["backtest", "--series", "s.csv", "--period", "24", "--model", "m.txt", "--gains", "1.5,0,0", "--output", "r.csv"],
    );
    assert_eq!(out.status.code(), Some(6));
}
