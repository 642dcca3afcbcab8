//! End-to-end runs: data preparation, training, evaluation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{bnn_train, ensemble_train, mcdropout_train};
use crate::dataio::{split, zscore_fit, NormalizationStats, RawSeries, RunConfig, Splits, Strategy};
use crate::error::{Error, Result};
use crate::model::{Model, TrainedParams, TrainingMeta};
use crate::nets::{IntervalSeries, ModelSpec};
use crate::objectives::MetricReport;
use crate::training::{train_cascade, train_joint, window_data, JointOptions, TrainOptions, TrainRecord, WindowedBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn pick(self, s: &Splits) -> &RawSeries {
        match self {
            SplitName::Train => &s.train,
            SplitName::Val => &s.val,
            SplitName::Test => &s.test,
        }
    }
}

impl FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            _ => Err(Error::arg("split", format!("expected train, val or test, got `{s}`"))),
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        })
    }
}

/// Normalized training windows and everything needed to undo the scaling.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub series: RawSeries,
    pub splits: Splits,
    pub stats: NormalizationStats,
    pub windows: WindowedBatch,
    pub spec: ModelSpec,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let series = cfg.dataset.load()?;
    prepare_series(cfg, series)
}

pub fn prepare_series(cfg: &RunConfig, series: RawSeries) -> Result<Prepared> {
    let splits = split(&series, &cfg.split)?;
    let stats = zscore_fit(&splits.train)?;
    let train = stats.apply(&splits.train);
    let windows = window_data(&train.u, &train.y, cfg.window, cfg.stride)?;
    Ok(Prepared { series, splits, stats, windows, spec: cfg.model_spec()? })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: Model,
    /// One record per trained network; ensembles have one per member.
    pub records: Vec<TrainRecord>,
    pub prepared: Prepared,
}

pub fn train(cfg: &RunConfig) -> Result<RunOutput> {
    let prepared = prepare(cfg)?;
    train_prepared(cfg, prepared)
}

pub fn train_prepared(cfg: &RunConfig, prepared: Prepared) -> Result<RunOutput> {
    let spec = prepared.spec.clone();
    let data = &prepared.windows;
    let opts = TrainOptions::from_config(cfg);
    let b = cfg.baseline;
    let (params, records) = match cfg.strategy {
        Strategy::Cascade | Strategy::Joint => {
            let m = if cfg.strategy == Strategy::Cascade {
                train_cascade(&spec, data, &opts)?
            } else {
                train_joint(&spec, data, &opts, &JointOptions::default())?
            };
            (TrainedParams::Interval { theta: m.theta, margins: m.margins }, vec![m.record])
        }
        Strategy::Bnn => {
            let (p, r) = bnn_train(&spec, data, &opts, b.rho)?;
            (TrainedParams::Bnn(p), vec![r])
        }
        Strategy::McDropout => {
            let (t, r) = mcdropout_train(&spec, data, &opts, b.dropout)?;
            (TrainedParams::McDropout(t), vec![r])
        }
        Strategy::Ensemble => {
            let (ms, rs) = ensemble_train(&spec, data, &opts, b.members)?;
            (TrainedParams::Ensemble(ms), rs)
        }
    };
    let first = &records[0];
    let training = TrainingMeta {
        strategy: cfg.strategy,
        dataset: prepared.series.name.clone(),
        seed: cfg.seed,
        alpha: cfg.alpha,
        lambda: cfg.lambda,
        beta: cfg.beta,
        r_h: cfg.r_h,
        r_o: cfg.r_o,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        window: cfg.window,
        stride: cfg.stride,
        best_theta_epoch: first.best_theta.as_ref().map_or(0, |s| s.epoch),
        best_margins_epoch: first.best_margins.as_ref().map(|s| s.epoch),
    };
    let model = Model {
        spec,
        params,
        normalization: prepared.stats,
        split: cfg.split,
        training,
        baseline: cfg.strategy.is_baseline().then_some(b),
    };
    Ok(RunOutput { model, records, prepared })
}

/// Closed-loop prediction over one split, in normalized units.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub split: SplitName,
    pub metrics: MetricReport,
    /// Raw split data.
    pub raw: RawSeries,
    pub target: Vec<f64>,
    pub prediction: IntervalSeries,
}

/// Simulates the split from its first measured output; metrics cover the
/// predicted steps `2..=K`.
pub fn evaluate(model: &Model, series: &RawSeries, which: SplitName) -> Result<Evaluation> {
    let splits = split(series, &model.split)?;
    let raw = which.pick(&splits).clone();
    if raw.len() < 2 {
        return Err(Error::Empty("evaluation split needs at least 2 samples"));
    }
    let norm = model.normalization.apply(&raw);
    let prediction = model.predict(&norm.u, norm.y[0])?;
    let metrics = MetricReport::compute(&norm.y[1..], &prediction.y[1..], &prediction.lo[1..], &prediction.hi[1..], model.spec.alpha)?;
    Ok(Evaluation { split: which, metrics, raw, target: norm.y, prediction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::parse_config;

    fn cfg(strategy: &str) -> RunConfig {
        parse_config(&format!(
            r#"{{"dataset": {{"synthetic": {{"length": 300}}}}, "window": 20, "stride": 4,
                "lags": {{"n_x": 1, "n_d": 0, "n_y": 1}}, "model": {{"kind": "node", "hidden": [4]}},
                "strategy": "{strategy}", "epochs": 2, "batch_size": 8,
                "baseline": {{"members": 2, "samples": 4}}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn every_strategy_trains_and_evaluates() {
        for s in ["cascade", "joint", "bnn", "mc_dropout", "ensemble"] {
            let c = cfg(s);
            let out = train(&c).unwrap();
            let series = c.dataset.load().unwrap();
            let ev = evaluate(&out.model, &series, SplitName::Test).unwrap();
            assert_eq!(ev.prediction.len(), 150);
            assert!(ev.metrics.rmse.is_finite() && (0.0..=100.0).contains(&ev.metrics.picp), "{s}");
            let back = crate::model::parse_model(&out.model.to_json().unwrap()).unwrap();
            let ev2 = evaluate(&back, &series, SplitName::Test).unwrap();
            assert_eq!(serde_json::to_string(&ev.metrics).unwrap(), serde_json::to_string(&ev2.metrics).unwrap());
        }
    }

    #[test]
    fn same_seed_same_model() {
        let c = cfg("joint");
        assert_eq!(train(&c).unwrap().model.digest().unwrap(), train(&c).unwrap().model.digest().unwrap());
    }

    #[test]
    fn split_names() {
        assert_eq!("val".parse::<SplitName>().unwrap(), SplitName::Val);
        assert!("dev".parse::<SplitName>().is_err());
        assert_eq!(SplitName::Test.to_string(), "test");
    }
}
