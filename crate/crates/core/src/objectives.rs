//! Losses and evaluation metrics, as plain functions over flattened values
//! and as tape nodes for training.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Width-penalty weight used when a config does not set one.
pub const DEFAULT_LAMBDA: f64 = 0.1;
/// CWC under-coverage penalty constant.
pub const DEFAULT_ETA: f64 = 25.0;

fn same_len(what: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(what, format!("{} vs {} values", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty(what));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::arg("alpha", format!("must lie in (0, 1), got {alpha}")))
    }
}

fn check_bounds(lo: &[f64], hi: &[f64]) -> Result<()> {
    for (&l, &h) in lo.iter().zip(hi) {
        if l > h || l.is_nan() || h.is_nan() {
            return Err(Error::InvalidInterval { lo: l, hi: h, reason: "lower bound exceeds upper bound" });
        }
    }
    Ok(())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    same_len("mse", pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    mse(pred, target).map(f64::sqrt)
}

#[inline]
fn rqr_term(y: f64, lo: f64, hi: f64, alpha: f64) -> f64 {
    let kappa = (y - lo) * (y - hi);
    if kappa >= 0.0 {
        alpha * kappa
    } else {
        (alpha - 1.0) * kappa
    }
}

/// Mean of the relaxed quantile loss on `κ = (ŷ − y̲)(ŷ − ȳ)` plus
/// `λ (ȳ − y̲)² / 2`.
pub fn rqr_w(target: &[f64], lo: &[f64], hi: &[f64], alpha: f64, lambda: f64) -> Result<f64> {
    same_len("rqr_w", target, lo)?;
    same_len("rqr_w", target, hi)?;
    check_alpha(alpha)?;
    if !(lambda >= 0.0) {
        return Err(Error::arg("lambda", format!("must be nonnegative, got {lambda}")));
    }
    check_bounds(lo, hi)?;
    let total: f64 = target
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(&y, (&l, &h))| rqr_term(y, l, h, alpha) + 0.5 * lambda * (h - l).powi(2))
        .sum();
    Ok(total / target.len() as f64)
}

/// Mean Gaussian negative log-likelihood without the constant term.
pub fn nll(target: &[f64], mu: &[f64], var: &[f64]) -> Result<f64> {
    same_len("nll", target, mu)?;
    same_len("nll", target, var)?;
    if let Some(v) = var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::arg("variance", format!("must be positive, got {v}")));
    }
    let total: f64 =
        target.iter().zip(mu.iter().zip(var)).map(|(&y, (&m, &v))| 0.5 * v.ln() + (y - m).powi(2) / (2.0 * v)).sum();
    Ok(total / target.len() as f64)
}

/// Percentage of targets inside their closed interval.
pub fn picp(target: &[f64], lo: &[f64], hi: &[f64]) -> Result<f64> {
    same_len("picp", target, lo)?;
    same_len("picp", target, hi)?;
    let hits = target.iter().zip(lo.iter().zip(hi)).filter(|(&y, (&l, &h))| l <= y && y <= h).count();
    Ok(100.0 * hits as f64 / target.len() as f64)
}

/// Mean interval width normalized by the target range.
pub fn pinaw(target: &[f64], lo: &[f64], hi: &[f64]) -> Result<f64> {
    same_len("pinaw", target, lo)?;
    same_len("pinaw", target, hi)?;
    let max = target.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = target.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if !(range > 0.0) {
        return Err(Error::UndefinedRange);
    }
    let width: f64 = lo.iter().zip(hi).map(|(l, h)| h - l).sum::<f64>() / target.len() as f64;
    Ok(width / range)
}

/// Coverage width criterion; `picp` in percent, `alpha` as a fraction.
pub fn cwc(picp: f64, pinaw: f64, alpha: f64, eta: f64) -> f64 {
    let p = picp / 100.0;
    if p < alpha {
        pinaw * (1.0 + (-eta * (p - alpha)).exp())
    } else {
        pinaw
    }
}

/// Evaluation summary. `rmse`, `pinaw` and `cwc` are scaled by 100; the
/// `*_raw` fields hold unscaled values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub picp: f64,
    pub pinaw: f64,
    pub cwc: f64,
    pub alpha: f64,
    pub eta: f64,
    pub scaled_by_100: bool,
    pub rmse_raw: f64,
    pub pinaw_raw: f64,
    pub cwc_raw: f64,
}

impl MetricReport {
    pub fn compute(target: &[f64], pred: &[f64], lo: &[f64], hi: &[f64], alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        check_bounds(lo, hi)?;
        let rmse_raw = rmse(pred, target)?;
        let picp = picp(target, lo, hi)?;
        let pinaw_raw = pinaw(target, lo, hi)?;
        let cwc_raw = cwc(picp, pinaw_raw, alpha, DEFAULT_ETA);
        Ok(MetricReport {
            rmse: 100.0 * rmse_raw,
            picp,
            pinaw: 100.0 * pinaw_raw,
            cwc: 100.0 * cwc_raw,
            alpha,
            eta: DEFAULT_ETA,
            scaled_by_100: true,
            rmse_raw,
            pinaw_raw,
            cwc_raw,
        })
    }
}

/// Mean squared error node.
pub fn mse_node(tape: &mut Tape, pred: Var, target: Var) -> Var {
    let e = tape.sub(pred, target);
    let sq = tape.square(e);
    tape.mean(sq)
}

/// RQR-W node; `target` is typically a constant.
pub fn rqr_w_node(tape: &mut Tape, target: Var, lo: Var, hi: Var, alpha: f64, lambda: f64) -> Var {
    let a = tape.sub(target, lo);
    let b = tape.sub(target, hi);
    let kappa = tape.hadamard(a, b);
    let pos = tape.scale(kappa, alpha);
    let neg = tape.scale(kappa, alpha - 1.0);
    let q = tape.select(kappa, pos, neg);
    let loss = if lambda > 0.0 {
        let w = tape.sub(hi, lo);
        let w2 = tape.square(w);
        let pen = tape.scale(w2, 0.5 * lambda);
        tape.add(q, pen)
    } else {
        q
    };
    tape.mean(loss)
}

/// Gaussian NLL node.
pub fn nll_node(tape: &mut Tape, target: Var, mu: Var, var: Var) -> Var {
    let lv = tape.ln(var);
    let half_lv = tape.scale(lv, 0.5);
    let e = tape.sub(target, mu);
    let e2 = tape.square(e);
    let q = tape.div(e2, var);
    let q = tape.scale(q, 0.5);
    let s = tape.add(half_lv, q);
    tape.mean(s)
}
