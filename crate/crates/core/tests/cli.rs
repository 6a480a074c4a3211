mod support;

use std::process::{Command, Output};

use support::*;

fn gridopf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridopf")).args(args).output().expect("binary runs")
}

#[test]
fn alpha_prints_the_factor() {
    let out = gridopf(&["alpha", "--beta", "0.95"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "2.497705");
}

#[test]
fn alpha_rejects_probability_outside_unit_interval() {
    assert_eq!(gridopf(&["alpha", "--beta", "1.5"]).status.code(), Some(2));
}

#[test]
fn bad_scenario_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut file = reference_file();
    file.grid = Some(reference_grid_path());
    file.loads[0].bus = "nowhere".into();
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
    let out = gridopf(&["run", "--scenario", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));

    let missing = dir.path().join("absent.json");
    let out = gridopf(&["run", "--scenario", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn short_run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = reference_scenario_path();
    let out = gridopf(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--horizon",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["steps.csv", "summary.json", "voltage.svg", "taps.svg", "dg.svg"] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let csv = std::fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 * 25 + 1);
}

#[test]
fn compare_writes_both_cases() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = reference_scenario_path();
    let out = gridopf(&[
        "compare",
        "--scenario",
        scenario.to_str().unwrap(),
        "--horizon",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("with-cov/steps.csv").is_file());
    assert!(dir.path().join("no-cov/steps.csv").is_file());
}
