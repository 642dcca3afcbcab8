use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to each scale before renormalization.
pub const SCALE_FLOOR: f64 = 1e-4;

/// Dynamic loss scales `(s1, s2)` of the Pareto loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalePair {
    pub s1: f64,
    pub s2: f64,
}

impl Default for ScalePair {
    fn default() -> Self {
        ScalePair { s1: 0.5, s2: 0.5 }
    }
}

impl ScalePair {
    pub fn new(s1: f64, s2: f64) -> Result<Self> {
        if !(s1 >= 0.0 && s2 >= 0.0 && s1 + s2 > 0.0 && (s1 + s2).is_finite()) {
            return Err(Error::arg("scales", format!("({s1}, {s2}) are not valid loss scales")));
        }
        Ok(ScalePair { s1, s2 })
    }

    pub fn as_array(self) -> [f64; 2] {
        [self.s1, self.s2]
    }

    /// Floors both scales and rescales them to unit sum.
    pub fn renormalized(s1: f64, s2: f64) -> Self {
        let a = if s1.is_nan() { SCALE_FLOOR } else { s1.max(SCALE_FLOOR) };
        let b = if s2.is_nan() { SCALE_FLOOR } else { s2.max(SCALE_FLOOR) };
        let t = a + b;
        ScalePair { s1: a / t, s2: b / t }
    }
}

/// One evaluation of the gradient-balancing loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradNormStep {
    pub l_grad: f64,
    /// Scaled gradient norms `G_j = s_j * |grad L_j|`.
    pub g: [f64; 2],
    /// Detached targets `mean(G) * r_j^beta`.
    pub targets: [f64; 2],
    /// Relative inverse training rates.
    pub rates: [f64; 2],
    /// `dL_grad / ds_j`.
    pub grad_s: [f64; 2],
}

/// `losses` are `L_j` now, `initial` the values from the first iteration and
/// `norms` the unscaled gradient norms of each loss on the shared parameters.
pub fn gradnorm_update(losses: [f64; 2], initial: [f64; 2], scales: ScalePair, norms: [f64; 2], beta: f64) -> Result<GradNormStep> {
    if initial.iter().any(|&l| l == 0.0 || !l.is_finite()) {
        return Err(Error::Numeric(format!("initial losses {initial:?} leave the training-rate ratio undefined")));
    }
    let ratio = [losses[0] / initial[0], losses[1] / initial[1]];
    let mean_ratio = 0.5 * (ratio[0] + ratio[1]);
    if !(mean_ratio > 0.0 && mean_ratio.is_finite()) {
        return Err(Error::Numeric(format!("loss ratios {ratio:?} leave the relative training rate undefined")));
    }
    let rates = [ratio[0] / mean_ratio, ratio[1] / mean_ratio];
    let s = scales.as_array();
    let g = [s[0] * norms[0], s[1] * norms[1]];
    let gbar = 0.5 * (g[0] + g[1]);
    let targets = [gbar * rates[0].powf(beta), gbar * rates[1].powf(beta)];
    let l_grad = (g[0] - targets[0]).abs() + (g[1] - targets[1]).abs();
    let sign = |d: f64| if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
    let grad_s = [sign(g[0] - targets[0]) * norms[0], sign(g[1] - targets[1]) * norms[1]];
    Ok(GradNormStep { l_grad, g, targets, rates, grad_s })
}
