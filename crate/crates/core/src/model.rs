//! Versioned JSON document for trained models.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{bnn_predict, ensemble_predict, mcdropout_predict, Posterior, Predictive};
use crate::dataio::{BaselineConfig, NormalizationStats, SplitFractions, Strategy};
use crate::error::{Error, Result};
use crate::nets::{materialize, simulate, CrispParams, IntervalParams, IntervalSeries, ModelSpec, UncertaintyParams};

pub const FORMAT_VERSION: u32 = 1;

/// Row-major tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorDoc {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamsDoc {
    Interval { theta: Vec<TensorDoc>, lower: Vec<TensorDoc>, upper: Vec<TensorDoc> },
    Bnn { mean: Vec<TensorDoc>, rho_raw: Vec<TensorDoc> },
    McDropout { theta: Vec<TensorDoc> },
    Ensemble { members: Vec<Vec<TensorDoc>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub strategy: Strategy,
    pub dataset: String,
    pub seed: u64,
    pub alpha: f64,
    pub lambda: f64,
    pub beta: f64,
    pub r_h: f64,
    pub r_o: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub window: usize,
    pub stride: usize,
    /// Epochs the returned snapshots come from; 0 is the initialization.
    pub best_theta_epoch: usize,
    #[serde(default)]
    pub best_margins_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub params: ParamsDoc,
    pub normalization: NormalizationStats,
    pub split: SplitFractions,
    pub training: TrainingMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedParams {
    Interval { theta: CrispParams, margins: UncertaintyParams },
    Bnn(Posterior),
    McDropout(CrispParams),
    Ensemble(Vec<CrispParams>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: TrainedParams,
    pub normalization: NormalizationStats,
    pub split: SplitFractions,
    pub training: TrainingMeta,
    pub baseline: Option<BaselineConfig>,
}

fn docs(spec: &ModelSpec, tensors: &[Array2<f64>]) -> Vec<TensorDoc> {
    spec.layout()
        .iter()
        .zip(tensors)
        .map(|(info, t)| TensorDoc { name: info.name.clone(), rows: t.nrows(), cols: t.ncols(), data: t.iter().copied().collect() })
        .collect()
}

fn tensors(spec: &ModelSpec, docs: &[TensorDoc], what: &str) -> Result<Vec<Array2<f64>>> {
    let layout = spec.layout();
    if docs.len() != layout.len() {
        return Err(Error::Format(format!("{what}: {} tensors, spec implies {}", docs.len(), layout.len())));
    }
    let l = spec.lags;
    layout
        .iter()
        .zip(docs)
        .map(|(info, d)| {
            if d.name != info.name {
                return Err(Error::Format(format!("{what}: tensor `{}` where `{}` was expected", d.name, info.name)));
            }
            if (d.rows, d.cols) != (info.rows, info.cols) {
                return Err(Error::shape(
                    "model",
                    format!(
                        "{what}: tensor `{}` is {}x{} but spec (kind {:?}, hidden {:?}, outputs {}, lags n_x={} n_d={} n_y={}) implies {}x{}",
                        d.name, d.rows, d.cols, spec.kind, spec.hidden, spec.outputs, l.n_x, l.n_d, l.n_y, info.rows, info.cols
                    ),
                ));
            }
            if d.data.len() != d.rows * d.cols {
                return Err(Error::Format(format!("{what}: tensor `{}` has {} values for {}x{}", d.name, d.data.len(), d.rows, d.cols)));
            }
            if d.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("{what}: tensor `{}` holds non-finite values", d.name)));
            }
            Ok(Array2::from_shape_vec((d.rows, d.cols), d.data.clone()).expect("checked length"))
        })
        .collect()
}

impl Model {
    pub fn to_document(&self) -> ModelDocument {
        let s = &self.spec;
        let params = match &self.params {
            TrainedParams::Interval { theta, margins } => ParamsDoc::Interval {
                theta: docs(s, &theta.tensors),
                lower: docs(s, &margins.lower),
                upper: docs(s, &margins.upper),
            },
            TrainedParams::Bnn(p) => ParamsDoc::Bnn { mean: docs(s, &p.mean.tensors), rho_raw: docs(s, &p.rho_raw) },
            TrainedParams::McDropout(t) => ParamsDoc::McDropout { theta: docs(s, &t.tensors) },
            TrainedParams::Ensemble(ms) => ParamsDoc::Ensemble { members: ms.iter().map(|m| docs(s, &m.tensors)).collect() },
        };
        ModelDocument {
            format_version: FORMAT_VERSION,
            spec: self.spec.clone(),
            params,
            normalization: self.normalization,
            split: self.split,
            training: self.training.clone(),
            baseline: self.baseline,
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format_version {} (expected {FORMAT_VERSION})", doc.format_version)));
        }
        let spec = doc.spec;
        spec.validate()?;
        doc.split.validate()?;
        let n = &doc.normalization;
        if !(n.std_u > 0.0 && n.std_y > 0.0) || ![n.mean_u, n.mean_y, n.std_u, n.std_y].iter().all(|v| v.is_finite()) {
            return Err(Error::Format("normalization statistics must be finite with positive deviations".into()));
        }
        let crisp = |d: &[TensorDoc], what: &str| tensors(&spec, d, what).map(|tensors| CrispParams { tensors });
        let baseline_needed = doc.training.strategy.is_baseline();
        let params = match &doc.params {
            ParamsDoc::Interval { theta, lower, upper } => {
                let margins = UncertaintyParams { lower: tensors(&spec, lower, "lower")?, upper: tensors(&spec, upper, "upper")? };
                TrainedParams::Interval { theta: crisp(theta, "theta")?, margins }
            }
            ParamsDoc::Bnn { mean, rho_raw } => {
                TrainedParams::Bnn(Posterior { mean: crisp(mean, "mean")?, rho_raw: tensors(&spec, rho_raw, "rho_raw")? })
            }
            ParamsDoc::McDropout { theta } => TrainedParams::McDropout(crisp(theta, "theta")?),
            ParamsDoc::Ensemble { members } => {
                if members.len() < 2 {
                    return Err(Error::Format(format!("ensemble needs at least 2 members, found {}", members.len())));
                }
                TrainedParams::Ensemble(members.iter().map(|m| crisp(m, "member")).collect::<Result<_>>()?)
            }
        };
        let tag_matches = matches!(
            (&params, doc.training.strategy),
            (TrainedParams::Interval { .. }, Strategy::Cascade | Strategy::Joint)
                | (TrainedParams::Bnn(_), Strategy::Bnn)
                | (TrainedParams::McDropout(_), Strategy::McDropout)
                | (TrainedParams::Ensemble(_), Strategy::Ensemble)
        );
        if !tag_matches {
            return Err(Error::Format(format!("parameters do not match strategy `{}`", doc.training.strategy)));
        }
        if baseline_needed != doc.baseline.is_some() {
            return Err(Error::Format("baseline hyperparameters must be present exactly for baseline strategies".into()));
        }
        if let Some(b) = &doc.baseline {
            if !(b.rho > 0.0) || !(0.0..1.0).contains(&b.dropout) || b.samples < 2 || b.members < 2 {
                return Err(Error::Format(format!("invalid baseline hyperparameters {b:?}")));
            }
        }
        if baseline_needed != (spec.outputs == 2) {
            return Err(Error::Format(format!("spec.outputs = {} does not fit strategy `{}`", spec.outputs, doc.training.strategy)));
        }
        Ok(Model { spec, params, normalization: doc.normalization, split: doc.split, training: doc.training, baseline: doc.baseline })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    /// Content hash of the serialized document.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    pub fn interval_params(&self) -> Result<(CrispParams, IntervalParams)> {
        match &self.params {
            TrainedParams::Interval { theta, margins } => Ok((theta.clone(), materialize(&self.spec, theta, margins)?)),
            _ => Err(Error::NoUncertainty),
        }
    }

    /// Closed-loop prediction on normalized data from `y(1) = y1`.
    pub fn predict(&self, u: &[f64], y1: f64) -> Result<IntervalSeries> {
        let alpha = self.spec.alpha;
        let row = || Array2::from_shape_vec((1, u.len()), u.to_vec()).map_err(|e| Error::shape("predict", e.to_string()));
        let seed = self.training.seed;
        let b = self.baseline.unwrap_or_default();
        let p: Predictive = match &self.params {
            TrainedParams::Interval { theta, margins } => {
                let iv = materialize(&self.spec, theta, margins)?;
                return simulate(&self.spec, theta, Some(&iv), u, y1);
            }
            TrainedParams::Bnn(post) => bnn_predict(&self.spec, post, &row()?, &[y1], b.samples, seed)?,
            TrainedParams::McDropout(t) => mcdropout_predict(&self.spec, t, &row()?, &[y1], b.dropout, b.samples, seed)?,
            TrainedParams::Ensemble(ms) => ensemble_predict(&self.spec, ms, &row()?, &[y1])?,
        };
        let r = p.intervals(alpha)?;
        Ok(IntervalSeries { y: r.y.row(0).to_vec(), lo: r.lo.row(0).to_vec(), hi: r.hi.row(0).to_vec() })
    }
}

pub fn parse_model(text: &str) -> Result<Model> {
    let doc: ModelDocument = serde_json::from_str(text).map_err(|e| Error::Format(format!("model document: {e}")))?;
    Model::from_document(doc)
}

pub fn load_model(path: impl AsRef<std::path::Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text)
}
