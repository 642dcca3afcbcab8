use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Trajectory windows of a series; row `i` starts at sample `i * stride`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedBatch {
    /// Inputs, `B x N`.
    pub u: Array2<f64>,
    /// Measured outputs, `B x N`.
    pub y: Array2<f64>,
    pub window: usize,
    pub stride: usize,
}

impl WindowedBatch {
    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gathers rows into a mini-batch.
    pub fn select(&self, rows: &[usize]) -> MiniBatch {
        let u = self.u.select(Axis(0), rows);
        let y = self.y.select(Axis(0), rows);
        let y1 = y.column(0).to_vec();
        MiniBatch { u, target: y.reversed_axes(), y1 }
    }

    pub fn all(&self) -> MiniBatch {
        self.select(&(0..self.len()).collect::<Vec<_>>())
    }
}

/// A mini-batch in the layout the tape rollout expects.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    /// `b x N`.
    pub u: Array2<f64>,
    /// Targets with steps as rows, `N x b`.
    pub target: Array2<f64>,
    /// Measured first outputs.
    pub y1: Vec<f64>,
}

/// Number of windows the loop `for k = 1 to K - N step n_step` visits.
pub fn window_count(k: usize, n: usize, stride: usize) -> usize {
    if k <= n || stride == 0 {
        0
    } else {
        (k - n - 1) / stride + 1
    }
}

pub fn window_data(u: &[f64], y: &[f64], n: usize, stride: usize) -> Result<WindowedBatch> {
    let k = u.len();
    if y.len() != k {
        return Err(Error::shape("window_data", format!("u has {k} samples, y has {}", y.len())));
    }
    if n < 1 {
        return Err(Error::arg("window", "must be at least 1"));
    }
    if stride < 1 {
        return Err(Error::arg("stride", "must be at least 1"));
    }
    if k <= n {
        return Err(Error::EmptyWindow { len: k, window: n });
    }
    let b = window_count(k, n, stride);
    let mut wu = Array2::zeros((b, n));
    let mut wy = Array2::zeros((b, n));
    for i in 0..b {
        let s = i * stride;
        for j in 0..n {
            wu[[i, j]] = u[s + j];
            wy[[i, j]] = y[s + j];
        }
    }
    Ok(WindowedBatch { u: wu, y: wy, window: n, stride })
}
