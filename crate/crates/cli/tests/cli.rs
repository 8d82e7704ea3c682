use std::process::{Command, Output};

use serde_json::Value;

fn bbmlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bbmlab"))
        .args(args)
        .env_remove("BBMLAB_SEED")
        .output()
        .expect("bbmlab runs")
}

fn records(out: &Output) -> Vec<Value> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).expect("each line is JSON"))
        .collect()
}

#[test]
fn deviation_reports_hybrid_method() {
    let dir = tempfile::tempdir().unwrap();
    let curve = dir.path().join("c.csv");
    let curve = curve.to_str().unwrap();
    let out = bbmlab(&["curve", "--ell", "3", "--n", "4000", "--curve", curve, "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = bbmlab(&["deviation", "--t", "8", "--x", "2", "--ell", "3", "--curve", curve]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rec = &records(&out)[0];
    assert_eq!(rec["command"], "deviation");
    assert_eq!(rec["result"]["estimate"]["method"], "hybrid");
    assert!(rec["result"]["estimate"]["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn analytic_suite_passes() {
    let out = bbmlab(&["verify", "--suite", "analytic"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let recs = records(&out);
    let summary = &recs.last().unwrap()["result"];
    assert_eq!(summary["failed"], 0);
}

#[test]
fn invalid_input_exits_two() {
    assert_eq!(bbmlab(&["tail", "--t", "5", "--n", "10"]).status.code(), Some(2));
    assert_eq!(bbmlab(&["tail", "--t", "-1", "--x", "0", "--n", "10"]).status.code(), Some(2));
    assert_eq!(bbmlab(&["verify", "--suite", "nope"]).status.code(), Some(2));
}

#[test]
fn population_cap_exits_three() {
    let out = bbmlab(&["simulate", "--t", "8", "--n", "5", "--pop-cap", "10"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    std::fs::write(&cfg, r#"{"t": 3.0, "x": 0.5, "n": 500, "seed": 11}"#).unwrap();
    let cfg = cfg.to_str().unwrap();
    let from_file = records(&bbmlab(&["tail", "--config", cfg]));
    assert_eq!(from_file[0]["seed"], 11);
    assert_eq!(from_file[0]["config"]["n"], 500);
    let overridden = records(&bbmlab(&["tail", "--config", cfg, "--n", "700", "--seed", "12"]));
    assert_eq!(overridden[0]["seed"], 12);
    assert_eq!(overridden[0]["config"]["n"], 700);
    assert_eq!(overridden[0]["config"]["t"], 3.0);
    assert_ne!(from_file[0]["config_hash"], overridden[0]["config_hash"]);
}

#[test]
fn env_seed_applies_only_when_unset() {
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_bbmlab")).args(args).env("BBMLAB_SEED", "77").output().unwrap();
        records(&out)[0]["seed"].clone()
    };
    assert_eq!(run(&["tail", "--t", "3", "--x", "0", "--n", "100"]), 77);
    assert_eq!(run(&["tail", "--t", "3", "--x", "0", "--n", "100", "--seed", "5"]), 5);
}

#[test]
fn worker_count_does_not_change_output() {
    let args = ["simulate", "--t", "3", "--n", "50", "--seed", "9"];
    let one = bbmlab(&[&args[..], &["--workers", "1"]].concat());
    let four = bbmlab(&[&args[..], &["--workers", "4"]].concat());
    assert!(one.status.success());
    let strip = |o: &Output| {
        records(o)
            .into_iter()
            .map(|mut r| {
                r["config"].as_object_mut().unwrap().remove("workers");
                r.as_object_mut().unwrap().remove("config_hash");
                r
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&one), strip(&four));
    assert_eq!(records(&one).len(), 50);
}
