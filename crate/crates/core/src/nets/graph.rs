//! Differentiable rollouts recorded on a [`Tape`].

use ndarray::Array2;

use super::forward::{input_lags, DropoutSampler, VARIANCE_FLOOR};
use super::params::{CrispParams, UncertaintyParams};
use super::spec::{Activation, ModelKind, ModelSpec, Trick};
use crate::autodiff::{Bound, Tape, Var};
use crate::error::{Error, Result};

/// Lower and upper bound nodes; `lo == hi` marks a degenerate interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IvVar {
    pub lo: Var,
    pub hi: Var,
}

impl IvVar {
    pub fn point(v: Var) -> Self {
        IvVar { lo: v, hi: v }
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }
}

/// Places θ on the tape, as parameters when `trainable`.
pub fn theta_vars(tape: &mut Tape, theta: &CrispParams, trainable: bool) -> Vec<Var> {
    theta.tensors.iter().map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) }).collect()
}

/// Places Δ′ on the tape as parameters: lower tensors first, then upper.
pub fn margin_vars(tape: &mut Tape, margins: &UncertaintyParams) -> (Vec<Var>, Vec<Var>) {
    let lower = margins.lower.iter().map(|t| tape.param(t.clone())).collect();
    let upper = margins.upper.iter().map(|t| tape.param(t.clone())).collect();
    (lower, upper)
}

fn trick_node(tape: &mut Tape, trick: Trick, v: Var) -> Var {
    match trick {
        Trick::Abs => tape.abs(v),
        Trick::Relu => tape.relu(v),
    }
}

/// θ̃ = [θ − σ_Δ(Δ′_lower), θ + σ_Δ(Δ′_upper)] for every tensor.
pub fn interval_vars(tape: &mut Tape, trick: Trick, theta: &[Var], lower: &[Var], upper: &[Var]) -> Vec<IvVar> {
    theta
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(&t, (&dl, &du))| {
            let ml = trick_node(tape, trick, dl);
            let mu = trick_node(tape, trick, du);
            IvVar { lo: tape.sub(t, ml), hi: tape.add(t, mu) }
        })
        .collect()
}

fn act_node(tape: &mut Tape, act: Activation, v: Var) -> Var {
    match act {
        Activation::Tanh => tape.tanh(v),
        Activation::Sigmoid => tape.sigmoid(v),
        Activation::Relu => tape.relu(v),
        Activation::Identity => v,
    }
}

fn iv_act(tape: &mut Tape, act: Activation, x: IvVar) -> IvVar {
    if x.is_point() {
        return IvVar::point(act_node(tape, act, x.lo));
    }
    IvVar { lo: act_node(tape, act, x.lo), hi: act_node(tape, act, x.hi) }
}

fn iv_matmul(tape: &mut Tape, a: IvVar, b: IvVar) -> IvVar {
    if a.is_point() && b.is_point() {
        return IvVar::point(tape.matmul(a.lo, b.lo));
    }
    IvVar {
        lo: tape.interval_matmul(Bound::Lower, a.lo, a.hi, b.lo, b.hi),
        hi: tape.interval_matmul(Bound::Upper, a.lo, a.hi, b.lo, b.hi),
    }
}

fn iv_add(tape: &mut Tape, a: IvVar, b: IvVar) -> IvVar {
    if a.is_point() && b.is_point() {
        return IvVar::point(tape.add(a.lo, b.lo));
    }
    IvVar { lo: tape.add(a.lo, b.lo), hi: tape.add(a.hi, b.hi) }
}

fn iv_add_column(tape: &mut Tape, a: IvVar, b: IvVar) -> IvVar {
    if a.is_point() && b.is_point() {
        return IvVar::point(tape.add_column(a.lo, b.lo));
    }
    IvVar { lo: tape.add_column(a.lo, b.lo), hi: tape.add_column(a.hi, b.hi) }
}

fn iv_hadamard(tape: &mut Tape, a: IvVar, b: IvVar) -> IvVar {
    if a.is_point() && b.is_point() {
        return IvVar::point(tape.hadamard(a.lo, b.lo));
    }
    let corners = if b.is_point() {
        let p = tape.hadamard(a.lo, b.lo);
        let q = tape.hadamard(a.hi, b.lo);
        [p, p, q, q]
    } else {
        [tape.hadamard(a.lo, b.lo), tape.hadamard(a.lo, b.hi), tape.hadamard(a.hi, b.lo), tape.hadamard(a.hi, b.hi)]
    };
    IvVar { lo: tape.min4(corners), hi: tape.max4(corners) }
}

fn affine(tape: &mut Tape, w: Var, x: Var, b: Var) -> Var {
    let z = tape.matmul(w, x);
    tape.add_column(z, b)
}

fn iv_affine(tape: &mut Tape, w: IvVar, x: IvVar, b: IvVar) -> IvVar {
    let z = iv_matmul(tape, w, x);
    iv_add_column(tape, z, b)
}

fn masked(tape: &mut Tape, h: Var, dropout: &mut Option<&mut DropoutSampler>) -> Var {
    match dropout.as_deref_mut() {
        Some(d) => {
            let shape = tape.value(h).dim();
            let m = tape.constant(d.mask(shape.0, shape.1));
            tape.hadamard(h, m)
        }
        None => h,
    }
}

fn ff(tape: &mut Tape, spec: &ModelSpec, p: &[Var], x: Var, dropout: &mut Option<&mut DropoutSampler>) -> Var {
    let mut h = x;
    let n = spec.hidden.len();
    for l in 0..n {
        let z = affine(tape, p[2 * l], h, p[2 * l + 1]);
        h = act_node(tape, spec.activation(l), z);
        h = masked(tape, h, dropout);
    }
    affine(tape, p[2 * n], h, p[2 * n + 1])
}

fn iv_ff(tape: &mut Tape, spec: &ModelSpec, iv: &[IvVar], x: Var) -> IvVar {
    let mut h = IvVar::point(x);
    let n = spec.hidden.len();
    for l in 0..n {
        let z = iv_affine(tape, iv[2 * l], h, iv[2 * l + 1]);
        h = iv_act(tape, spec.activation(l), z);
    }
    iv_affine(tape, iv[2 * n], h, iv[2 * n + 1])
}

struct LstmVars {
    h: Vec<Var>,
    c: Vec<Var>,
}

fn lstm(
    tape: &mut Tape,
    spec: &ModelSpec,
    p: &[Var],
    x: Var,
    state: &LstmVars,
    dropout: &mut Option<&mut DropoutSampler>,
) -> (Var, LstmVars) {
    let mut input = x;
    let mut next = LstmVars { h: Vec::new(), c: Vec::new() };
    for l in 0..spec.hidden.len() {
        let gate = |tape: &mut Tape, g: usize| {
            let base = spec.lstm_base(l, g);
            let wx = tape.matmul(p[base], input);
            let uh = tape.matmul(p[base + 1], state.h[l]);
            let s = tape.add(wx, uh);
            tape.add_column(s, p[base + 2])
        };
        let i = gate(tape, 0);
        let i = tape.sigmoid(i);
        let f = gate(tape, 1);
        let f = tape.sigmoid(f);
        let o = gate(tape, 2);
        let o = tape.sigmoid(o);
        let q = gate(tape, 3);
        let q = tape.tanh(q);
        let fc = tape.hadamard(f, state.c[l]);
        let iq = tape.hadamard(i, q);
        let c = tape.add(fc, iq);
        let tc = tape.tanh(c);
        let h = tape.hadamard(o, tc);
        input = masked(tape, h, dropout);
        next.h.push(h);
        next.c.push(c);
    }
    let k = spec.out_index();
    (affine(tape, p[k], input, p[k + 1]), next)
}

fn iv_lstm(tape: &mut Tape, spec: &ModelSpec, iv: &[IvVar], x: Var, state: &LstmVars) -> IvVar {
    let mut input = IvVar::point(x);
    for l in 0..spec.hidden.len() {
        let h_prev = IvVar::point(state.h[l]);
        let c_prev = IvVar::point(state.c[l]);
        let gate = |tape: &mut Tape, g: usize, act: Activation| {
            let base = spec.lstm_base(l, g);
            let wx = iv_matmul(tape, iv[base], input);
            let uh = iv_matmul(tape, iv[base + 1], h_prev);
            let s = iv_add(tape, wx, uh);
            let z = iv_add_column(tape, s, iv[base + 2]);
            iv_act(tape, act, z)
        };
        let i = gate(tape, 0, Activation::Sigmoid);
        let f = gate(tape, 1, Activation::Sigmoid);
        let o = gate(tape, 2, Activation::Sigmoid);
        let q = gate(tape, 3, Activation::Tanh);
        let fc = iv_hadamard(tape, f, c_prev);
        let iq = iv_hadamard(tape, i, q);
        let c = iv_add(tape, fc, iq);
        let tc = iv_act(tape, Activation::Tanh, c);
        input = iv_hadamard(tape, o, tc);
    }
    let k = spec.out_index();
    iv_affine(tape, iv[k], input, iv[k + 1])
}

/// Recorded rollout; every node is `N x batch` with step 1 in row 0.
#[derive(Debug, Clone, Copy)]
pub struct GraphRollout {
    /// Crisp output, or the mean for Gaussian heads.
    pub y: Var,
    /// Interval bounds when interval parameters were supplied.
    pub bounds: Option<(Var, Var)>,
    /// Gaussian-head variance for steps `2..=N`, `(N - 1) x batch`.
    pub var: Option<Var>,
}

/// Records a closed-loop rollout over the rows of `u` (`batch x N`) from
/// `y(1) = y1`, mirroring [`super::forward::simulate_batch`].
pub fn rollout(
    tape: &mut Tape,
    spec: &ModelSpec,
    theta: &[Var],
    iv: Option<&[IvVar]>,
    u: &Array2<f64>,
    y1: &[f64],
    mut dropout: Option<&mut DropoutSampler>,
) -> Result<GraphRollout> {
    let (b, n) = u.dim();
    if n < 2 {
        return Err(Error::arg("horizon", "a training window needs at least 2 steps"));
    }
    if y1.len() != b || theta.len() != spec.tensor_count() || iv.is_some_and(|iv| iv.len() != theta.len()) {
        return Err(Error::shape("rollout", "inputs do not match the model spec"));
    }
    if iv.is_some() && spec.outputs != 1 {
        return Err(Error::InvalidSpec("interval rollout needs a single-output model".into()));
    }
    let lags = spec.lags;
    let first = tape.constant(Array2::from_shape_vec((1, b), y1.to_vec()).expect("row vector"));
    let zero_row = tape.constant(Array2::zeros((1, b)));
    let mut y_rows = vec![first];
    let mut lo_rows = vec![first];
    let mut hi_rows = vec![first];
    let mut var_rows = Vec::new();
    let mut state = LstmVars {
        h: spec.hidden.iter().map(|&h| tape.constant(Array2::zeros((h, b)))).collect(),
        c: spec.hidden.iter().map(|&h| tape.constant(Array2::zeros((h, b)))).collect(),
    };
    for t in 1..n {
        let mut parts = vec![tape.constant(input_lags(&lags, u.view(), t))];
        for j in 1..=lags.n_y {
            parts.push(if j <= t { y_rows[t - j] } else { zero_row });
        }
        let x = tape.concat_rows(&parts);
        let y_prev = y_rows[t - 1];

        let (out, interval) = match spec.kind {
            ModelKind::Lstm => {
                let (out, next) = lstm(tape, spec, theta, x, &state, &mut dropout);
                let interval = iv.map(|iv| iv_lstm(tape, spec, iv, x, &state));
                state = next;
                (out, interval)
            }
            ModelKind::Feedforward => {
                let out = ff(tape, spec, theta, x, &mut dropout);
                (out, iv.map(|iv| iv_ff(tape, spec, iv, x)))
            }
            ModelKind::Node => {
                let f = ff(tape, spec, theta, x, &mut dropout);
                let interval = iv.map(|iv| {
                    let g = iv_ff(tape, spec, iv, x);
                    IvVar { lo: tape.add(g.lo, y_prev), hi: tape.add(g.hi, y_prev) }
                });
                (f, interval)
            }
        };
        let (mean, raw_var) = if spec.outputs == 2 {
            (tape.slice_rows(out, 0, 1), Some(tape.slice_rows(out, 1, 1)))
        } else {
            (out, None)
        };
        let yt = if spec.kind == ModelKind::Node { tape.add(mean, y_prev) } else { mean };
        y_rows.push(yt);
        if let Some(r) = raw_var {
            let sp = tape.softplus(r);
            var_rows.push(tape.add_scalar(sp, VARIANCE_FLOOR));
        }
        if let Some(ivo) = interval {
            lo_rows.push(ivo.lo);
            hi_rows.push(ivo.hi);
        }
    }
    let y = tape.concat_rows(&y_rows);
    let bounds = iv.map(|_| (tape.concat_rows(&lo_rows), tape.concat_rows(&hi_rows)));
    let var = (!var_rows.is_empty()).then(|| tape.concat_rows(&var_rows));
    Ok(GraphRollout { y, bounds, var })
}
