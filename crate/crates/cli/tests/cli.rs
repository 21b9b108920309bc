use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn l1prune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l1prune"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn gen(dir: &Path, seed: &str) {
    let out = l1prune(&[
        "gen", "--out", dir.to_str().unwrap(), "--seed", seed, "--units", "2", "--nodes", "2",
        "--m", "8", "--n", "8", "--p", "32",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for (k, val) in map.iter_mut() {
                if k.ends_with("time_secs") {
                    *val = Value::Null;
                } else {
                    strip_timing(val);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

#[test]
fn gen_prune_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "3");
    let manifest = dir.path().join("manifest.json");
    let out = l1prune(&["prune", manifest.to_str().unwrap(), "--pattern", "semi:2:4", "--K", "10"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pattern"], "semi:2:4");
    assert_eq!(report["tuner"]["fista"]["max_iters"], 10);
    for unit in report["units"].as_array().unwrap() {
        for node in unit["nodes"].as_array().unwrap() {
            assert_eq!(node["achieved_sparsity"], 0.5);
            assert!(dir.path().join(node["pruned_file"].as_str().unwrap()).exists());
        }
    }
    assert!(dir.path().join("report.json").exists());

    let out = l1prune(&["eval", dir.path().to_str().unwrap(), "--calibration"]);
    assert_eq!(out.status.code(), Some(0));
    let eval: Value = serde_json::from_slice(&out.stdout).unwrap();
    for (u, e) in report["units"].as_array().unwrap().iter().zip(eval["units"].as_array().unwrap()) {
        let a = u["unit_output_error"].as_f64().unwrap();
        let b = e["output_error"].as_f64().unwrap();
        assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }
}

#[test]
fn fixed_seed_deterministic_reports_match() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "11");
    let manifest = dir.path().join("manifest.json");
    let mut reports = Vec::new();
    for (parallel, out) in [("1", "a"), ("2", "b")] {
        let out_dir = dir.path().join(out);
        let o = l1prune(&[
            "prune", manifest.to_str().unwrap(), "--seed", "5", "--deterministic", "--parallel", parallel,
            "--out", out_dir.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        let mut v: Value = serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
        strip_timing(&mut v);
        reports.push(v);
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0]["seed"], 5);
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(l1prune(&["prune", missing.to_str().unwrap()]).status.code(), Some(2));

    gen(dir.path(), "1");
    let manifest = dir.path().join("manifest.json");
    // 8 columns are not divisible into groups of 3
    let out = l1prune(&["prune", manifest.to_str().unwrap(), "--pattern", "semi:1:3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("report.json").exists());

    let out = l1prune(&["prune", manifest.to_str().unwrap(), "--xi", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_without_pruned_files_reports_per_unit_errors() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "2");
    let out = l1prune(&["eval", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let eval: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(eval["input"], "held_out");
    assert!(eval["units"].as_array().unwrap().iter().all(|u| u["error"].is_string()));
}

#[test]
fn sweep_writes_one_report_per_rate() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "4");
    let out_dir = dir.path().join("sweep");
    let out = l1prune(&[
        "sweep", dir.path().to_str().unwrap(), "--rates", "0.25,0.5", "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("rate_0.25/report.json").exists());
    assert!(out_dir.join("rate_0.50/report.json").exists());
    assert!(out_dir.join("sweep.json").exists());
}
