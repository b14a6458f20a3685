use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pricelaw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pricelaw")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_run_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let synth = stdout_json(&pricelaw(&["synth", "--out", s(dir.path()), "--family"]));
    assert_eq!(synth["stocks"].as_array().unwrap().len(), 6);
    assert_eq!(synth["family"].as_array().unwrap().len(), 3);
    assert!(dir.path().join("scenario.toml").is_file());

    let run = stdout_json(&pricelaw(&["run", "--config", s(&dir.path().join("run.toml")), "--n-boot", "100"]));
    assert!(run["failed_units"].as_array().unwrap().is_empty());
    assert_eq!(run["collapses"].as_array().unwrap().len(), 4);
    let run_dir = dir.path().join("run");
    assert!(run_dir.join("report.json").is_file());
    assert!(run_dir.join("config.toml").is_file());

    let plots = dir.path().join("plots");
    let manifest = stdout_json(&pricelaw(&["emit-plots", "--run", s(&run_dir), "--out", s(&plots)]));
    let files = manifest["files"].as_array().unwrap();
    assert!(!files.is_empty());
    for f in files {
        assert!(plots.join(f.as_str().unwrap()).is_file());
    }
}

#[test]
fn family_collapse_and_fit_commands() {
    let dir = tempfile::tempdir().unwrap();
    let synth = stdout_json(&pricelaw(&["synth", "--out", s(dir.path()), "--family"]));
    let mut args = vec!["collapse".to_string(), "--threshold".into(), "0".into()];
    for f in synth["family"].as_array().unwrap() {
        args.push("--curve".into());
        args.push(format!("{}={}:{}", f["group_id"].as_str().unwrap(), f["file"].as_str().unwrap(), f["c"]));
    }
    let out_dir = dir.path().join("collapse");
    args.extend(["--out".into(), out_dir.to_str().unwrap().into()]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let collapse = stdout_json(&pricelaw(&args));
    assert!(collapse["gamma"].is_f64() && collapse["delta"].is_f64());
    assert!(collapse["epsilon"].as_f64().unwrap() >= 0.0);
    assert!(out_dir.join("collapse.json").is_file() && out_dir.join("collapse.csv").is_file());

    let sample = dir.path().join("sample.txt");
    let values: String = (1..=400).map(|i| format!("{}\n", (1.0 - i as f64 / 401.0).powf(-1.0 / 1.5))).collect();
    std::fs::write(&sample, values).unwrap();
    let fit = stdout_json(&pricelaw(&["fit-powerlaw", "--input", s(&sample), "--n-boot", "100"]));
    assert!((fit["alpha"].as_f64().unwrap() - 2.5).abs() < 0.5, "{fit}");
    assert!(fit["p_value"].is_f64());
}

#[test]
fn bad_config_reports_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[powerlaw]\nn_boot = 50\n").unwrap();
    let err = stderr_json(&pricelaw(&["run", "--config", s(&cfg)]));
    assert_eq!(err["error"], "config");
    assert_eq!(err["field"], "powerlaw.n_boot");
    assert!(err["message"].is_string());
}

#[test]
fn missing_input_reports_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = pricelaw(&["fit-powerlaw", "--input", s(&dir.path().join("absent.txt"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "io");
}

#[test]
fn usage_error_exits_with_two() {
    let out = pricelaw(&["collapse"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");
}
