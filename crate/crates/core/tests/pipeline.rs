use inn_core::analysis::{analyze, export_heatmap, ReportMeta};
use inn_core::dataio::{load_config, write_csv, SyntheticConfig};
use inn_core::model::load_model;
use inn_core::pipeline::{evaluate, train, SplitName};
use inn_core::Error;

const CONFIG: &str = r#"{"dataset": {"csv": "plant.csv"}, "window": 20, "stride": 4,
  "lags": {"n_x": 1, "n_d": 0, "n_y": 1}, "model": {"kind": "lstm", "hidden": [4]},
  "strategy": "cascade", "epochs": 3, "batch_size": 8}"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let series = inn_core::dataio::generate(&SyntheticConfig { length: 300, ..Default::default() }).unwrap();
    write_csv(&series, dir.path().join("plant.csv")).unwrap();
    std::fs::write(dir.path().join("run.json"), CONFIG).unwrap();
    dir
}

#[test]
fn csv_paths_resolve_against_the_config_file() {
    let dir = setup();
    let cfg = load_config(dir.path().join("run.json")).unwrap();
    assert_eq!(cfg.dataset.load().unwrap().len(), 300);
}

#[test]
fn saved_model_reproduces_evaluation() {
    let dir = setup();
    let cfg = load_config(dir.path().join("run.json")).unwrap();
    let out = train(&cfg).unwrap();
    let path = dir.path().join("model.json");
    std::fs::write(&path, out.model.to_json().unwrap()).unwrap();
    let back = load_model(&path).unwrap();
    for split in [SplitName::Train, SplitName::Val, SplitName::Test] {
        let a = evaluate(&out.model, &out.prepared.series, split).unwrap();
        let b = evaluate(&back, &out.prepared.series, split).unwrap();
        assert_eq!(a.prediction, b.prediction);
        assert!(a.prediction.lo.iter().zip(&a.prediction.hi).all(|(l, h)| l <= h));
    }
}

#[test]
fn analysis_of_trained_model_exports_index() {
    let dir = setup();
    let cfg = load_config(dir.path().join("run.json")).unwrap();
    let out = train(&cfg).unwrap();
    let (theta, iv) = out.model.interval_params().unwrap();
    let meta = ReportMeta { model_id: out.model.digest().unwrap(), strategy: "cascade".into(), seed: 0, alpha: 0.9 };
    let rep = analyze(&out.model.spec, &theta, &iv, meta).unwrap();
    let files = export_heatmap(&rep, dir.path().join("heat")).unwrap();
    assert!(files.iter().any(|p| p.ends_with("index.json")));
    assert_eq!(files.len(), 2 * rep.heatmaps.len() + 1);
}

#[test]
fn baselines_have_no_interval_parameters() {
    let dir = setup();
    let mut cfg = load_config(dir.path().join("run.json")).unwrap();
    cfg.strategy = "mc_dropout".parse().unwrap();
    cfg.model_spec().unwrap();
    let out = train(&cfg).unwrap();
    assert!(matches!(out.model.interval_params(), Err(Error::NoUncertainty)));
    let ev = evaluate(&out.model, &out.prepared.series, SplitName::Test).unwrap();
    assert!(ev.metrics.picp.is_finite());
}
