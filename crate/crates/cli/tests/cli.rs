use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use inn_core::analysis::HeatmapIndex;
use inn_core::dataio::load_csv;
use inn_core::model::load_model;
use inn_core::pipeline::{evaluate, SplitName};

fn inn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inn")).args(args).current_dir(dir).env("INN_OUTPUT_ROOT", dir.join("runs")).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const CONFIG: &str = r#"{"dataset": {"csv": "data.csv"}, "window": 20, "stride": 4,
  "lags": {"n_x": 1, "n_d": 0, "n_y": 1}, "model": {"kind": "node", "hidden": [4]},
  "strategy": "cascade", "epochs": 2, "batch_size": 8,
  "baseline": {"members": 2, "samples": 4}}"#;

/// Temp dir with `data.csv` (300 synthetic samples) and `run.json`.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = inn(&["synth", "--out", "data.csv", "--length", "300"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    std::fs::write(dir.path().join("run.json"), CONFIG).unwrap();
    dir
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--config", "run.json", "--out", out];
    args.extend_from_slice(extra);
    let o = inn(&args, dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join(out)
}

#[test]
fn train_requires_config_and_validates_alpha() {
    let dir = workspace();
    let o = inn(&["train"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--config"));
    let o = inn(&["train", "--config", "run.json", "--alpha", "1.5"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("alpha"));
    let o = inn(&["train", "--config", "missing.json"], dir.path());
    assert_eq!(code(&o), 3);
}

#[test]
fn config_errors_carry_line_numbers() {
    let dir = workspace();
    std::fs::write(dir.path().join("bad.json"), "{\n  \"window\": 20,\n  \"typo\": 1\n}").unwrap();
    let o = inn(&["train", "--config", "bad.json"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn same_config_and_seed_give_identical_models() {
    let dir = workspace();
    let a = train(dir.path(), "a", &["--strategy", "joint", "--seed", "3"]);
    let b = train(dir.path(), "b", &["--strategy", "joint", "--seed", "3"]);
    let read = |p: &Path| std::fs::read(p.join("model.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    for f in ["model.json", "epochs.jsonl", "manifest.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["strategy"], "joint");
    assert_eq!(m["input_hash"].as_str().unwrap().len(), 64);

    let o = inn(&["train", "--manifest", "a/manifest.json", "--out", "c"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(&a), read(&dir.path().join("c")));
}

#[test]
fn default_output_directory_uses_env_root() {
    let dir = workspace();
    let o = inn(&["train", "--config", "run.json", "--model", "ilstm", "--trick", "relu"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("runs/data-ilstm1-cascade-s0/model.json").exists());
    let model = load_model(dir.path().join("runs/data-ilstm1-cascade-s0/model.json")).unwrap();
    assert_eq!(model.spec.trick, inn_core::nets::Trick::Relu);
}

#[test]
fn eval_is_deterministic_json() {
    let dir = workspace();
    train(dir.path(), "m", &[]);
    let a = inn(&["eval", "--model", "m/model.json", "--data", "data.csv", "--split", "test"], dir.path());
    let b = inn(&["eval", "--model", "m/model.json", "--data", "data.csv", "--split", "test"], dir.path());
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    for k in ["rmse", "picp", "pinaw", "cwc"] {
        assert!(v[k].is_number(), "{k}");
    }
    let o = inn(&["eval", "--model", "m/model.json", "--data", "data.csv", "--split", "dev"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn degenerate_intervals_have_zero_width() {
    let dir = workspace();
    train(dir.path(), "m", &[]);
    let path = dir.path().join("m/model.json");
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    for side in ["lower", "upper"] {
        for t in doc["params"][side].as_array_mut().unwrap() {
            for v in t["data"].as_array_mut().unwrap() {
                *v = serde_json::json!(0.0);
            }
        }
    }
    std::fs::write(dir.path().join("flat.json"), doc.to_string()).unwrap();
    let o = inn(&["eval", "--model", "flat.json", "--data", "data.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["pinaw"], 0.0);
    assert!(v["picp"].as_f64().unwrap() < 5.0);
}

#[test]
fn mismatched_lags_name_the_fields() {
    let dir = workspace();
    train(dir.path(), "m", &[]);
    let path = dir.path().join("m/model.json");
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    doc["spec"]["lags"]["n_x"] = serde_json::json!(2);
    std::fs::write(dir.path().join("bad.json"), doc.to_string()).unwrap();
    let o = inn(&["eval", "--model", "bad.json", "--data", "data.csv"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("n_x"), "{}", stderr(&o));
}

#[test]
fn predict_writes_denormalized_test_horizon() {
    let dir = workspace();
    train(dir.path(), "m", &["--strategy", "joint"]);
    let o = inn(&["predict", "--model", "m/model.json", "--data", "data.csv", "--out", "pred.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("pred.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "k,u,y_true,y,y_lo,y_hi");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();

    let model = load_model(dir.path().join("m/model.json")).unwrap();
    let series = load_csv(dir.path().join("data.csv")).unwrap();
    let ev = evaluate(&model, &series, SplitName::Test).unwrap();
    assert_eq!(rows.len(), ev.raw.len());
    assert_eq!(rows[0][0], 150.0);
    let n = &model.normalization;
    for (i, r) in rows.iter().enumerate() {
        assert!(r[4] <= r[3] && r[3] <= r[5], "row {i}: {r:?}");
        assert!((n.norm_y(r[3]) - ev.prediction.y[i]).abs() < 1e-10);
        assert!((n.norm_y(r[4]) - ev.prediction.lo[i]).abs() < 1e-10);
        assert_eq!(r[2], ev.raw.y[i]);
    }
    let o = inn(&["predict", "--model", "m/model.json", "--data", "data.csv", "--out", "no/such/dir/p.csv"], dir.path());
    assert_eq!(code(&o), 3);
}

#[test]
fn analyze_exports_one_heatmap_per_layer() {
    let dir = workspace();
    train(dir.path(), "m", &[]);
    let o = inn(&["analyze", "--model", "m/model.json", "--out", "heat"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let index: HeatmapIndex = serde_json::from_str(&std::fs::read_to_string(dir.path().join("heat/index.json")).unwrap()).unwrap();
    assert_eq!(index.files.len(), 2);
    for f in &index.files {
        assert!(dir.path().join("heat").join(&f.heatmap).exists());
        assert!(dir.path().join("heat").join(&f.channelwise).exists());
    }

    train(dir.path(), "e", &["--strategy", "ensemble"]);
    let o = inn(&["analyze", "--model", "e/model.json", "--out", "heat2"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("no uncertainty parameters"));
}

fn suite(dir: &Path, cells: &str) -> &'static str {
    let text = format!(
        r#"{{"base": {{"dataset": {{"csv": "data.csv"}}, "window": 20, "stride": 4, "lags": {{"n_x": 1, "n_d": 0, "n_y": 1}},
             "model": {{"kind": "node", "hidden": [3]}}, "epochs": 1, "batch_size": 16}}, "cells": [{cells}]}}"#
    );
    std::fs::write(dir.join("suite.json"), text).unwrap();
    "suite.json"
}

#[test]
fn benchmark_tabulates_mean_and_std() {
    let dir = workspace();
    let s = suite(dir.path(), r#"{"strategy": "cascade", "alpha": 0.9}, {"name": "broken", "dataset": {"csv": "none.csv"}, "strategy": "joint", "alpha": 0.9}"#);
    let o = inn(&["benchmark", "--suite", s, "--seeds", "2", "--out", "bench", "--jobs", "2"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("bench/results.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.contains("rmse_mean,rmse_std") && header.contains("picp_mean,picp_std"));
    let ok = lines.next().unwrap();
    assert!(ok.starts_with("data-inode1-cascade-a0.9,data,inode-1,cascade,0.9,2,ok,"), "{ok}");
    let failed = lines.next().unwrap();
    assert!(failed.starts_with("broken,none,inode-1,joint,0.9,2,failed,,"), "{failed}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("bench/results.json")).unwrap()).unwrap();
    assert_eq!(json[0]["seeds"], serde_json::json!([0, 1]));
    assert!(json[0]["rmse"]["std"].as_f64().unwrap() >= 0.0);
    assert!(dir.path().join("bench/data-inode1-cascade-a0.9/seed1/metrics.json").exists());
}

#[test]
fn empty_suite_gives_empty_table() {
    let dir = workspace();
    let s = suite(dir.path(), "");
    let o = inn(&["benchmark", "--suite", s, "--out", "bench"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("bench/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert_eq!(std::fs::read_to_string(dir.path().join("bench/results.json")).unwrap().trim(), "[]");
}

#[test]
fn numeric_failure_exits_4() {
    let dir = workspace();
    let cfg = CONFIG.replace("\"epochs\": 2", "\"epochs\": 5, \"optimizer\": {\"lr\": 1e300}");
    std::fs::write(dir.path().join("explode.json"), cfg).unwrap();
    let o = inn(&["train", "--config", "explode.json", "--strategy", "joint", "--out", "x"], dir.path());
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}
