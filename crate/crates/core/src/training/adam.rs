use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction for one parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Array2<f64>]) -> Self {
        let zeros: Vec<_> = params.iter().map(|p| Array2::zeros(p.dim())).collect();
        Adam { config, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[&Array2<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("adam", format!("{} moments, {} params, {} grads", self.m.len(), params.len(), grads.len())));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.dim() != m.dim() || g.dim() != m.dim() {
                return Err(Error::shape("adam", format!("{:?} param vs {:?} grad vs {:?} moment", p.dim(), g.dim(), m.dim())));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(p).and(*g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![array![[1.0, -2.0]]];
        let g = Array2::zeros((1, 2));
        let mut opt = Adam::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            opt.step(&mut p, &[&g]).unwrap();
        }
        assert_eq!(p[0], array![[1.0, -2.0]]);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        let cfg = AdamConfig::default();
        for g0 in [0.3, -2.0, 1e-9] {
            let mut p = vec![array![[0.5]]];
            let mut opt = Adam::new(cfg, &p);
            opt.step(&mut p, &[&array![[g0]]]).unwrap();
            let expect = 0.5 - cfg.lr * g0 / (g0.abs() + cfg.eps);
            assert!((p[0][[0, 0]] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_approaches_signed_lr() {
        let cfg = AdamConfig::default();
        let mut p = vec![array![[0.0, 0.0]]];
        let g = array![[0.7, -3.0]];
        let mut opt = Adam::new(cfg, &p);
        let mut prev = p[0].clone();
        for _ in 0..5000 {
            prev = p[0].clone();
            opt.step(&mut p, &[&g]).unwrap();
        }
        let d = &p[0] - &prev;
        assert!((d[[0, 0]] + cfg.lr).abs() < 1e-9);
        assert!((d[[0, 1]] - cfg.lr).abs() < 1e-9);
        assert_eq!(opt.steps(), 5000);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![array![[0.0, 0.0]]];
        let mut opt = Adam::new(AdamConfig::default(), &p);
        assert!(opt.step(&mut p, &[&array![[0.0]]]).is_err());
        assert!(opt.step(&mut p, &[]).is_err());
        assert_eq!(opt.steps(), 0);
    }
}
