//! First-order linear test plant `y(k) = a y(k-1) + b u(k-1) + e(k)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::series::RawSeries;
use crate::error::{Error, Result};
use crate::rng;

fn d_len() -> usize {
    1000
}
fn d_a() -> f64 {
    0.9
}
fn d_b() -> f64 {
    0.1
}
fn d_noise() -> f64 {
    0.05
}
fn d_amp() -> f64 {
    10.0
}
fn d_hold_min() -> usize {
    10
}
fn d_hold_max() -> usize {
    40
}

/// Plant and excitation settings. The input is piecewise constant with
/// levels uniform in `[-amplitude, amplitude]` held for a uniform number of
/// steps in `[hold_min, hold_max]`; `e(k)` is i.i.d. `N(0, noise_std²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "d_len")]
    pub length: usize,
    #[serde(default = "d_a")]
    pub a: f64,
    #[serde(default = "d_b")]
    pub b: f64,
    #[serde(default = "d_noise")]
    pub noise_std: f64,
    #[serde(default = "d_amp")]
    pub amplitude: f64,
    #[serde(default = "d_hold_min")]
    pub hold_min: usize,
    #[serde(default = "d_hold_max")]
    pub hold_max: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            length: d_len(),
            a: d_a(),
            b: d_b(),
            noise_std: d_noise(),
            amplitude: d_amp(),
            hold_min: d_hold_min(),
            hold_max: d_hold_max(),
            seed: 0,
        }
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<RawSeries> {
    if cfg.length < 2 {
        return Err(Error::arg("length", "synthetic series needs at least 2 samples"));
    }
    if cfg.hold_min == 0 || cfg.hold_min > cfg.hold_max {
        return Err(Error::arg("hold_min", format!("invalid hold range {}..={}", cfg.hold_min, cfg.hold_max)));
    }
    if !(cfg.amplitude > 0.0 && cfg.amplitude.is_finite()) {
        return Err(Error::arg("amplitude", "must be positive"));
    }
    if !(cfg.noise_std >= 0.0 && cfg.noise_std.is_finite()) {
        return Err(Error::arg("noise_std", "must be finite and nonnegative"));
    }
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::arg("noise_std", e.to_string()))?;
    let mut ru = rng::stream(cfg.seed, "synthetic/u");
    let mut re = rng::stream(cfg.seed, "synthetic/noise");
    let mut u = Vec::with_capacity(cfg.length);
    while u.len() < cfg.length {
        let level = ru.random_range(-cfg.amplitude..=cfg.amplitude);
        let hold = ru.random_range(cfg.hold_min..=cfg.hold_max);
        u.extend(std::iter::repeat_n(level, hold.min(cfg.length - u.len())));
    }
    let mut y = vec![0.0; cfg.length];
    for k in 1..cfg.length {
        y[k] = cfg.a * y[k - 1] + cfg.b * u[k - 1] + noise.sample(&mut re);
    }
    RawSeries::new("synthetic", u, y)
}
