//! Direct (non-differentiable) evaluation of crisp and interval networks.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::params::{CrispParams, IntervalParams};
use super::spec::{Activation, Lags, ModelKind, ModelSpec};
use crate::autodiff::softplus;
use crate::error::{Error, Result};
use crate::interval::{sigmoid, IntervalMatrix};
use crate::rng::Rng;

/// Added to `softplus(raw)` so Gaussian-head variances stay positive.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Inverted-dropout mask source.
#[derive(Debug, Clone)]
pub struct DropoutSampler {
    rate: f64,
    rng: Rng,
}

impl DropoutSampler {
    pub fn new(rate: f64, rng: Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::arg("dropout", format!("rate must lie in [0, 1), got {rate}")));
        }
        Ok(DropoutSampler { rate, rng })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Entries are 0 with probability `rate`, otherwise `1 / (1 - rate)`.
    pub fn mask(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        if self.rate == 0.0 {
            return Array2::ones((rows, cols));
        }
        let keep = 1.0 / (1.0 - self.rate);
        let rate = self.rate;
        Array2::from_shape_fn((rows, cols), |_| if self.rng.random::<f64>() < rate { 0.0 } else { keep })
    }
}

/// Per-layer crisp LSTM state, each `hidden x batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<Array2<f64>>,
    pub c: Vec<Array2<f64>>,
}

impl LstmState {
    pub fn zeros(spec: &ModelSpec, batch: usize) -> Self {
        let h: Vec<_> = spec.hidden.iter().map(|&n| Array2::zeros((n, batch))).collect();
        LstmState { c: h.clone(), h }
    }
}

/// Regression vector for 0-based step `t` of each row of `u` (`batch x N`);
/// `y_hist[j]` holds the model outputs at step `j`. Indices before the
/// start of the window read 0.
pub fn regressor(lags: &Lags, u: ArrayView2<f64>, y_hist: &[Array1<f64>], t: usize) -> Array2<f64> {
    let mut x = Array2::zeros((lags.width(), u.nrows()));
    x.slice_mut(s![..=lags.n_x, ..]).assign(&input_lags(lags, u, t));
    for j in 1..=lags.n_y {
        if let Some(idx) = t.checked_sub(j) {
            x.row_mut(lags.n_x + j).assign(&y_hist[idx]);
        }
    }
    x
}

/// The `u` block of the regression vector, `(n_x + 1) x batch`.
pub fn input_lags(lags: &Lags, u: ArrayView2<f64>, t: usize) -> Array2<f64> {
    let mut x = Array2::zeros((lags.n_x + 1, u.nrows()));
    for j in 0..=lags.n_x {
        if let Some(idx) = t.checked_sub(lags.n_d + j) {
            x.row_mut(j).assign(&u.column(idx));
        }
    }
    x
}

fn affine(w: &Array2<f64>, x: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    w.dot(x) + b
}

/// Feedforward stack `f(x)` with affine output layer.
pub fn ff_forward(spec: &ModelSpec, p: &CrispParams, x: &Array2<f64>, mut dropout: Option<&mut DropoutSampler>) -> Array2<f64> {
    let mut h = x.clone();
    let n = spec.hidden.len();
    for l in 0..n {
        let act = spec.activation(l);
        h = affine(&p.tensors[2 * l], &h, &p.tensors[2 * l + 1]).mapv(|v| act.apply(v));
        if let Some(d) = dropout.as_deref_mut() {
            h *= &d.mask(h.nrows(), h.ncols());
        }
    }
    affine(&p.tensors[2 * n], &h, &p.tensors[2 * n + 1])
}

/// One step of the stacked LSTM; returns the output layer value and the new state.
pub fn lstm_step(
    spec: &ModelSpec,
    p: &CrispParams,
    x: &Array2<f64>,
    state: &LstmState,
    mut dropout: Option<&mut DropoutSampler>,
) -> (Array2<f64>, LstmState) {
    let mut input = x.clone();
    let mut next = LstmState { h: Vec::with_capacity(spec.hidden.len()), c: Vec::with_capacity(spec.hidden.len()) };
    for l in 0..spec.hidden.len() {
        let gate = |g: usize| {
            let base = spec.lstm_base(l, g);
            p.tensors[base].dot(&input) + p.tensors[base + 1].dot(&state.h[l]) + &p.tensors[base + 2]
        };
        let i = gate(0).mapv(sigmoid);
        let f = gate(1).mapv(sigmoid);
        let o = gate(2).mapv(sigmoid);
        let q = gate(3).mapv(f64::tanh);
        let c = &f * &state.c[l] + &i * &q;
        let h = &o * &c.mapv(f64::tanh);
        input = h.clone();
        if let Some(d) = dropout.as_deref_mut() {
            input *= &d.mask(h.nrows(), h.ncols());
        }
        next.h.push(h);
        next.c.push(c);
    }
    let k = spec.out_index();
    (affine(&p.tensors[k], &input, &p.tensors[k + 1]), next)
}

/// Euler step `y = y_prev + f(x)`; for two-output heads only the first row is residual.
pub fn node_step(
    spec: &ModelSpec,
    p: &CrispParams,
    x: &Array2<f64>,
    y_prev: &Array1<f64>,
    dropout: Option<&mut DropoutSampler>,
) -> Array2<f64> {
    let mut out = ff_forward(spec, p, x, dropout);
    let mut first = out.row_mut(0);
    first += y_prev;
    out
}

fn iv_affine(w: &IntervalMatrix, x: &IntervalMatrix, b: &IntervalMatrix) -> IntervalMatrix {
    let z = w.matmul(x).expect("layer shapes validated");
    IntervalMatrix::from_bounds_unchecked(z.lo() + b.lo(), z.hi() + b.hi())
}

fn iv_act(x: &IntervalMatrix, act: Activation) -> IntervalMatrix {
    x.map_monotone(|v| act.apply(v))
}

/// Interval feedforward stack evaluated on a crisp input.
pub fn inn_forward(spec: &ModelSpec, iv: &IntervalParams, x: &Array2<f64>) -> IntervalMatrix {
    let mut h = IntervalMatrix::point(x.clone());
    let n = spec.hidden.len();
    for l in 0..n {
        h = iv_act(&iv_affine(&iv.tensors[2 * l], &h, &iv.tensors[2 * l + 1]), spec.activation(l));
    }
    iv_affine(&iv.tensors[2 * n], &h, &iv.tensors[2 * n + 1])
}

/// Interval LSTM output for one step with degenerate recurrent inputs taken
/// from the crisp state.
pub fn ilstm_output(spec: &ModelSpec, iv: &IntervalParams, x: &Array2<f64>, state: &LstmState) -> IntervalMatrix {
    let mut input = IntervalMatrix::point(x.clone());
    for l in 0..spec.hidden.len() {
        let h_prev = IntervalMatrix::point(state.h[l].clone());
        let c_prev = IntervalMatrix::point(state.c[l].clone());
        let gate = |g: usize, act: Activation| {
            let base = spec.lstm_base(l, g);
            let wx = iv.tensors[base].matmul(&input).expect("layer shapes validated");
            let uh = iv.tensors[base + 1].matmul(&h_prev).expect("layer shapes validated");
            let b = &iv.tensors[base + 2];
            IntervalMatrix::from_bounds_unchecked(wx.lo() + uh.lo() + b.lo(), wx.hi() + uh.hi() + b.hi())
                .map_monotone(|v| act.apply(v))
        };
        let i = gate(0, Activation::Sigmoid);
        let f = gate(1, Activation::Sigmoid);
        let o = gate(2, Activation::Sigmoid);
        let q = gate(3, Activation::Tanh);
        let c = f.hadamard(&c_prev).and_then(|fc| i.hadamard(&q).and_then(|iq| fc.add(&iq))).expect("gate shapes agree");
        input = o.hadamard(&c.map_monotone(f64::tanh)).expect("gate shapes agree");
    }
    let k = spec.out_index();
    iv_affine(&iv.tensors[k], &input, &iv.tensors[k + 1])
}

/// Interval NODE output `[y_prev, y_prev] + f̃(x)`.
pub fn inode_output(spec: &ModelSpec, iv: &IntervalParams, x: &Array2<f64>, y_prev: &Array1<f64>) -> IntervalMatrix {
    let g = inn_forward(spec, iv, x);
    let prev = y_prev.view().insert_axis(Axis(0));
    IntervalMatrix::from_bounds_unchecked(g.lo() + &prev, g.hi() + &prev)
}

/// Everything a single step depends on besides the parameters.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub x: Array2<f64>,
    pub y_prev: Array1<f64>,
    pub lstm: Option<LstmState>,
}

/// Crisp output of one step from a given context.
pub fn crisp_output(spec: &ModelSpec, p: &CrispParams, ctx: &StepContext, dropout: Option<&mut DropoutSampler>) -> Array2<f64> {
    match spec.kind {
        ModelKind::Feedforward => ff_forward(spec, p, &ctx.x, dropout),
        ModelKind::Node => node_step(spec, p, &ctx.x, &ctx.y_prev, dropout),
        ModelKind::Lstm => lstm_step(spec, p, &ctx.x, ctx.lstm.as_ref().expect("LSTM context carries state"), dropout).0,
    }
}

/// Interval output of one step from a given context.
pub fn interval_output(spec: &ModelSpec, iv: &IntervalParams, ctx: &StepContext) -> IntervalMatrix {
    match spec.kind {
        ModelKind::Feedforward => inn_forward(spec, iv, &ctx.x),
        ModelKind::Node => inode_output(spec, iv, &ctx.x, &ctx.y_prev),
        ModelKind::Lstm => ilstm_output(spec, iv, &ctx.x, ctx.lstm.as_ref().expect("LSTM context carries state")),
    }
}

/// Per-step `(y, y_lo, y_hi)` of a single closed-loop rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSeries {
    pub y: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl IntervalSeries {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Batched rollout, each matrix `batch x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub y: Array2<f64>,
    pub lo: Array2<f64>,
    pub hi: Array2<f64>,
}

/// Step contexts and outputs of a rollout, for per-step inspection.
#[derive(Debug, Clone)]
pub struct Trace {
    pub steps: Vec<StepContext>,
    pub rollout: Rollout,
}

fn check_inputs(spec: &ModelSpec, theta: &CrispParams, u: &Array2<f64>, y1: &[f64]) -> Result<()> {
    spec.validate()?;
    theta.check(spec)?;
    if u.ncols() < 1 {
        return Err(Error::arg("horizon", "simulation horizon must be at least 1"));
    }
    if u.nrows() != y1.len() {
        return Err(Error::shape("simulate", format!("{} input rows but {} initial outputs", u.nrows(), y1.len())));
    }
    Ok(())
}

/// Closed-loop rollout of every row of `u` (`batch x N`) from `y(1) = y1`.
/// Step 1 is the given output; the model runs from step 2 with zero
/// initial recurrent state. Without `iv` the bounds equal the crisp output.
pub fn simulate_trace(
    spec: &ModelSpec,
    theta: &CrispParams,
    iv: Option<&IntervalParams>,
    u: &Array2<f64>,
    y1: &[f64],
) -> Result<Trace> {
    check_inputs(spec, theta, u, y1)?;
    if spec.outputs != 1 {
        return Err(Error::InvalidSpec("interval simulation needs a single-output model".into()));
    }
    if let Some(iv) = iv {
        if iv.tensors.len() != theta.tensors.len() {
            return Err(Error::shape("simulate", "interval and crisp parameter counts differ"));
        }
    }
    let (b, n) = u.dim();
    let mut y = Array2::zeros((b, n));
    let mut lo = Array2::zeros((b, n));
    let mut hi = Array2::zeros((b, n));
    let first = Array1::from(y1.to_vec());
    for m in [&mut y, &mut lo, &mut hi] {
        m.column_mut(0).assign(&first);
    }
    let mut hist = vec![first];
    let mut lstm = (spec.kind == ModelKind::Lstm).then(|| LstmState::zeros(spec, b));
    let mut steps = Vec::with_capacity(n.saturating_sub(1));
    for t in 1..n {
        let ctx = StepContext { x: regressor(&spec.lags, u.view(), &hist, t), y_prev: hist[t - 1].clone(), lstm: lstm.clone() };
        let out = match spec.kind {
            ModelKind::Lstm => {
                let (out, next) = lstm_step(spec, theta, &ctx.x, ctx.lstm.as_ref().unwrap(), None);
                lstm = Some(next);
                out
            }
            _ => crisp_output(spec, theta, &ctx, None),
        };
        let yt = out.row(0).to_owned();
        y.column_mut(t).assign(&yt);
        match iv {
            Some(iv) => {
                let bounds = interval_output(spec, iv, &ctx);
                lo.column_mut(t).assign(&bounds.lo().row(0));
                hi.column_mut(t).assign(&bounds.hi().row(0));
            }
            None => {
                lo.column_mut(t).assign(&yt);
                hi.column_mut(t).assign(&yt);
            }
        }
        hist.push(yt);
        steps.push(ctx);
    }
    Ok(Trace { steps, rollout: Rollout { y, lo, hi } })
}

pub fn simulate_batch(
    spec: &ModelSpec,
    theta: &CrispParams,
    iv: Option<&IntervalParams>,
    u: &Array2<f64>,
    y1: &[f64],
) -> Result<Rollout> {
    Ok(simulate_trace(spec, theta, iv, u, y1)?.rollout)
}

/// Single-sequence rollout over the whole input `u` from `y(1) = y1`.
pub fn simulate(spec: &ModelSpec, theta: &CrispParams, iv: Option<&IntervalParams>, u: &[f64], y1: f64) -> Result<IntervalSeries> {
    let um = Array2::from_shape_vec((1, u.len()), u.to_vec()).expect("row vector");
    let r = simulate_batch(spec, theta, iv, &um, &[y1])?;
    Ok(IntervalSeries { y: r.y.row(0).to_vec(), lo: r.lo.row(0).to_vec(), hi: r.hi.row(0).to_vec() })
}

/// Mean and variance trajectories of a Gaussian-head rollout (`batch x N`).
/// Step 1 carries the given output with zero variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRollout {
    pub mu: Array2<f64>,
    pub var: Array2<f64>,
}

/// Closed-loop rollout of a two-output model, feeding back the mean.
pub fn simulate_gaussian(
    spec: &ModelSpec,
    theta: &CrispParams,
    u: &Array2<f64>,
    y1: &[f64],
    mut dropout: Option<&mut DropoutSampler>,
) -> Result<GaussianRollout> {
    check_inputs(spec, theta, u, y1)?;
    if spec.outputs != 2 {
        return Err(Error::InvalidSpec("Gaussian rollout needs a two-output model".into()));
    }
    let (b, n) = u.dim();
    let mut mu = Array2::zeros((b, n));
    let mut var = Array2::zeros((b, n));
    let first = Array1::from(y1.to_vec());
    mu.column_mut(0).assign(&first);
    let mut hist = vec![first];
    let mut lstm = LstmState::zeros(spec, b);
    for t in 1..n {
        let x = regressor(&spec.lags, u.view(), &hist, t);
        let out = match spec.kind {
            ModelKind::Lstm => {
                let (out, next) = lstm_step(spec, theta, &x, &lstm, dropout.as_deref_mut());
                lstm = next;
                out
            }
            ModelKind::Node => node_step(spec, theta, &x, &hist[t - 1], dropout.as_deref_mut()),
            ModelKind::Feedforward => ff_forward(spec, theta, &x, dropout.as_deref_mut()),
        };
        let m = out.row(0).to_owned();
        mu.column_mut(t).assign(&m);
        var.column_mut(t).assign(&out.row(1).mapv(|r| softplus(r) + VARIANCE_FLOOR));
        hist.push(m);
    }
    Ok(GaussianRollout { mu, var })
}

/// Columns `1..` of a `batch x N` matrix.
#[cfg(test)]
fn modelled(m: &Array2<f64>) -> ArrayView2<'_, f64> {
    m.slice(s![.., 1..])
}
