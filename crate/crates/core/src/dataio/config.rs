use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::series::{load_csv, RawSeries, SplitFractions};
use super::synthetic::{generate, SyntheticConfig};
use crate::error::{Error, Result};
use crate::nets::{Activation, Lags, ModelKind, ModelSpec, Trick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Cascade,
    Joint,
    Bnn,
    McDropout,
    Ensemble,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Cascade => "cascade",
            Strategy::Joint => "joint",
            Strategy::Bnn => "bnn",
            Strategy::McDropout => "mc_dropout",
            Strategy::Ensemble => "ensemble",
        }
    }

    /// Baselines train a two-output Gaussian head instead of interval parameters.
    pub fn is_baseline(self) -> bool {
        matches!(self, Strategy::Bnn | Strategy::McDropout | Strategy::Ensemble)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cascade" | "c_inn" => Ok(Strategy::Cascade),
            "joint" | "j_inn" => Ok(Strategy::Joint),
            "bnn" => Ok(Strategy::Bnn),
            "mc_dropout" | "mcdropout" => Ok(Strategy::McDropout),
            "ensemble" | "deep_ensemble" => Ok(Strategy::Ensemble),
            _ => Err(Error::arg("strategy", format!("unknown strategy `{s}`"))),
        }
    }
}

/// Where a run's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Csv(PathBuf),
    Synthetic(SyntheticConfig),
}

impl DatasetSource {
    pub fn load(&self) -> Result<RawSeries> {
        match self {
            DatasetSource::Csv(p) => load_csv(p),
            DatasetSource::Synthetic(cfg) => generate(cfg),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DatasetSource::Csv(p) => p.file_stem().and_then(|s| s.to_str()).unwrap_or("csv").to_string(),
            DatasetSource::Synthetic(_) => "synthetic".to_string(),
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let DatasetSource::Csv(p) = self {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activations: Vec<Activation>,
}

fn d_lr() -> f64 {
    1e-3
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_lr_scales() -> f64 {
    0.025
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    /// Learning rate of the loss-scale group in joint training.
    #[serde(default = "d_lr_scales")]
    pub lr_scales: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { lr: d_lr(), beta1: d_beta1(), beta2: d_beta2(), eps: d_eps(), lr_scales: d_lr_scales() }
    }
}

fn d_rho() -> f64 {
    0.1
}
fn d_dropout() -> f64 {
    0.05
}
fn d_members() -> usize {
    5
}
fn d_samples() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// Prior standard deviation of the Bayesian network.
    #[serde(default = "d_rho")]
    pub rho: f64,
    /// MC Dropout rate.
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    /// Deep Ensemble size.
    #[serde(default = "d_members")]
    pub members: usize,
    /// Predictive samples for BNN and MC Dropout.
    #[serde(default = "d_samples")]
    pub samples: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { rho: d_rho(), dropout: d_dropout(), members: d_members(), samples: d_samples() }
    }
}

fn d_split() -> SplitFractions {
    SplitFractions { train: 40.0, val: 10.0, test: 50.0 }
}
fn d_alpha() -> f64 {
    0.9
}
fn d_lambda() -> f64 {
    crate::objectives::DEFAULT_LAMBDA
}
fn d_beta() -> f64 {
    0.1
}
fn d_rate() -> f64 {
    1.0
}
fn d_epochs() -> usize {
    300
}
fn d_batch() -> usize {
    32
}
fn d_trick() -> Trick {
    Trick::Abs
}
fn d_strategy() -> Strategy {
    Strategy::Cascade
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    #[serde(default = "d_split")]
    pub split: SplitFractions,
    /// Trajectory window length N.
    pub window: usize,
    /// Window stride n_step.
    pub stride: usize,
    pub lags: Lags,
    pub model: ModelConfig,
    #[serde(default = "d_trick")]
    pub trick: Trick,
    #[serde(default = "d_strategy")]
    pub strategy: Strategy,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    /// GradNorm asymmetry β.
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default = "d_rate")]
    pub r_h: f64,
    #[serde(default = "d_rate")]
    pub r_o: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
}

fn bad(reason: String) -> Error {
    Error::Config(reason)
}

impl RunConfig {
    pub fn model_spec(&self) -> Result<ModelSpec> {
        let spec = ModelSpec {
            kind: self.model.kind,
            hidden: self.model.hidden.clone(),
            activations: self.model.activations.clone(),
            lags: self.lags,
            trick: self.trick,
            alpha: self.alpha,
            outputs: if self.strategy.is_baseline() { 2 } else { 1 },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate().map_err(|e| bad(e.to_string()))?;
        if self.window < 2 {
            return Err(bad(format!("window must be at least 2, got {}", self.window)));
        }
        if self.stride < 1 {
            return Err(bad("stride must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(bad(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0) {
            return Err(bad(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(self.beta >= 0.0) {
            return Err(bad(format!("beta must be nonnegative, got {}", self.beta)));
        }
        for (name, r) in [("r_h", self.r_h), ("r_o", self.r_o)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(bad(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        if self.batch_size < 1 {
            return Err(bad("batch_size must be at least 1".into()));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr_scales > 0.0 && o.eps > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2)
        {
            return Err(bad(format!("invalid optimizer settings {o:?}")));
        }
        let b = &self.baseline;
        if !(b.rho > 0.0) {
            return Err(bad(format!("baseline.rho must be positive, got {}", b.rho)));
        }
        if !(0.0..1.0).contains(&b.dropout) {
            return Err(bad(format!("baseline.dropout must lie in [0, 1), got {}", b.dropout)));
        }
        if b.members < 2 {
            return Err(bad(format!("baseline.members must be at least 2, got {}", b.members)));
        }
        if b.samples < 2 {
            return Err(bad(format!("baseline.samples must be at least 2, got {}", b.samples)));
        }
        self.model_spec().map_err(|e| bad(e.to_string()))?;
        Ok(())
    }
}

/// Parses and validates a config document. Syntax and schema errors carry
/// the line and column.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a config file; relative CSV paths resolve against its directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    cfg.dataset.resolve(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

/// One benchmark cell; unset fields inherit from the suite base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteCell {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub dataset: Option<DatasetSource>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    pub strategy: Strategy,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub base: RunConfig,
    #[serde(default)]
    pub cells: Vec<SuiteCell>,
}

impl Suite {
    /// Resolved config and display name of cell `i`.
    pub fn cell(&self, i: usize) -> Result<(String, RunConfig)> {
        let c = &self.cells[i];
        let mut cfg = self.base.clone();
        if let Some(d) = &c.dataset {
            cfg.dataset = d.clone();
        }
        if let Some(m) = &c.model {
            cfg.model = m.clone();
        }
        cfg.strategy = c.strategy;
        cfg.alpha = c.alpha;
        let kind = match cfg.model.kind {
            ModelKind::Lstm => "ilstm",
            ModelKind::Node => "inode",
            ModelKind::Feedforward => "inn",
        };
        let name = c.name.clone().unwrap_or_else(|| {
            format!("{}-{}{}-{}-a{}", cfg.dataset.label(), kind, cfg.model.hidden.len(), cfg.strategy, cfg.alpha)
        });
        Ok((name, cfg))
    }
}

pub fn parse_suite(text: &str) -> Result<Suite> {
    let suite: Suite = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    suite.base.validate()?;
    Ok(suite)
}

pub fn load_suite(path: impl AsRef<Path>) -> Result<Suite> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut suite = parse_suite(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    suite.base.dataset.resolve(&base);
    for c in &mut suite.cells {
        if let Some(d) = &mut c.dataset {
            d.resolve(&base);
        }
    }
    Ok(suite)
}
