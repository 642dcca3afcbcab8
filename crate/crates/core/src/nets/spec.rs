use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Feedforward,
    Lstm,
    Node,
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "feedforward" | "ff" | "inn" => Ok(ModelKind::Feedforward),
            "lstm" | "ilstm" => Ok(ModelKind::Lstm),
            "node" | "inode" => Ok(ModelKind::Node),
            _ => Err(Error::arg("model", format!("unknown model kind `{s}` (expected ilstm, inode or feedforward)"))),
        }
    }
}

/// Hidden-layer activation. Only monotone functions are representable,
/// since interval propagation evaluates activations at the endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    Identity,
}

const NON_MONOTONE: &[&str] = &["gelu", "silu", "swish", "mish", "sin", "cos", "sinc", "gaussian", "rbf"];

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => crate::interval::sigmoid(x),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other if NON_MONOTONE.contains(&other) => Err(Error::InvalidSpec(format!(
                "activation `{s}` is not monotone; interval propagation requires a monotone activation"
            ))),
            _ => Err(Error::InvalidSpec(format!("unknown activation `{s}`"))),
        }
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> String {
        a.name().to_string()
    }
}

/// Positivity map applied to raw margins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trick {
    Abs,
    Relu,
}

impl Trick {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Trick::Abs => x.abs(),
            Trick::Relu => x.max(0.0),
        }
    }
}

impl FromStr for Trick {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "abs" => Ok(Trick::Abs),
            "relu" => Ok(Trick::Relu),
            _ => Err(Error::arg("trick", format!("unknown trick `{s}` (expected abs or relu)"))),
        }
    }
}

/// Regressor lags: input lag `n_x`, dead time `n_d`, output lag `n_y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lags {
    pub n_x: usize,
    pub n_d: usize,
    pub n_y: usize,
}

impl Lags {
    pub fn width(&self) -> usize {
        self.n_x + 1 + self.n_y
    }

    /// Labels of the regression-vector entries, in network input order.
    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.width());
        for j in 0..=self.n_x {
            out.push(lag_label("u", self.n_d + j));
        }
        for j in 1..=self.n_y {
            out.push(lag_label("y", j));
        }
        out
    }
}

fn lag_label(var: &str, lag: usize) -> String {
    if lag == 0 {
        format!("{var}(k)")
    } else {
        format!("{var}(k-{lag})")
    }
}

impl fmt::Display for Lags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n_x={} n_d={} n_y={}", self.n_x, self.n_d, self.n_y)
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Hidden layer widths, input side first.
    pub hidden: Vec<usize>,
    /// One per hidden layer for feedforward and NODE stacks; empty means tanh.
    #[serde(default)]
    pub activations: Vec<Activation>,
    pub lags: Lags,
    pub trick: Trick,
    pub alpha: f64,
    /// 1 for interval models, 2 for Gaussian heads (mean, raw variance).
    #[serde(default = "one")]
    pub outputs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Weight,
    Recurrent,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub role: TensorRole,
    /// Layer index; hidden layers count from 0, the output layer is last.
    pub layer: usize,
    pub is_output: bool,
}

pub const GATES: [&str; 4] = ["i", "f", "o", "c"];

impl ModelSpec {
    pub fn new(kind: ModelKind, hidden: Vec<usize>, lags: Lags, trick: Trick, alpha: f64) -> Result<Self> {
        let spec = ModelSpec { kind, hidden, activations: Vec::new(), lags, trick, alpha, outputs: 1 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::InvalidSpec("at least one hidden layer is required".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidSpec("hidden layer widths must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidSpec(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(1..=2).contains(&self.outputs) {
            return Err(Error::InvalidSpec(format!("outputs must be 1 or 2, got {}", self.outputs)));
        }
        match self.kind {
            ModelKind::Lstm if !self.activations.is_empty() => {
                return Err(Error::InvalidSpec("LSTM gate activations are fixed; `activations` must be empty".into()))
            }
            ModelKind::Feedforward | ModelKind::Node
                if !self.activations.is_empty() && self.activations.len() != self.hidden.len() =>
            {
                return Err(Error::InvalidSpec(format!(
                    "{} activations given for {} hidden layers",
                    self.activations.len(),
                    self.hidden.len()
                )))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.lags.width()
    }

    pub fn activation(&self, layer: usize) -> Activation {
        self.activations.get(layer).copied().unwrap_or(Activation::Tanh)
    }

    /// Shapes and roles of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        let mut d_in = self.input_width();
        let n_hidden = self.hidden.len();
        for (l, &h) in self.hidden.iter().enumerate() {
            match self.kind {
                ModelKind::Lstm => {
                    for g in GATES {
                        out.push(info(format!("lstm{l}.W_{g}"), h, d_in, TensorRole::Weight, l, false));
                        out.push(info(format!("lstm{l}.U_{g}"), h, h, TensorRole::Recurrent, l, false));
                        out.push(info(format!("lstm{l}.b_{g}"), h, 1, TensorRole::Bias, l, false));
                    }
                }
                _ => {
                    out.push(info(format!("layer{l}.W"), h, d_in, TensorRole::Weight, l, false));
                    out.push(info(format!("layer{l}.b"), h, 1, TensorRole::Bias, l, false));
                }
            }
            d_in = h;
        }
        out.push(info("out.W".into(), self.outputs, d_in, TensorRole::Weight, n_hidden, true));
        out.push(info("out.b".into(), self.outputs, 1, TensorRole::Bias, n_hidden, true));
        out
    }

    pub fn tensor_count(&self) -> usize {
        match self.kind {
            ModelKind::Lstm => 12 * self.hidden.len() + 2,
            _ => 2 * self.hidden.len() + 2,
        }
    }

    /// Index of the output layer weight.
    pub fn out_index(&self) -> usize {
        self.tensor_count() - 2
    }

    /// Indices of the shared parameters used for loss balancing: the weights
    /// (input and recurrent, no biases) of the last hidden layer.
    pub fn shared_indices(&self) -> Vec<usize> {
        let last = self.hidden.len() - 1;
        match self.kind {
            ModelKind::Lstm => (0..4).flat_map(|g| [12 * last + 3 * g, 12 * last + 3 * g + 1]).collect(),
            _ => vec![2 * last],
        }
    }

    /// Index of `lstm{layer}` gate `g` weight W; U and b follow it.
    pub(crate) fn lstm_base(&self, layer: usize, gate: usize) -> usize {
        12 * layer + 3 * gate
    }
}

fn info(name: String, rows: usize, cols: usize, role: TensorRole, layer: usize, is_output: bool) -> TensorInfo {
    TensorInfo { name, rows, cols, role, layer, is_output }
}
