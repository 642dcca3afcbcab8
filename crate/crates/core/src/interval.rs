//! Closed-interval scalars and elementwise interval matrices.
//!
//! Bounds are computed in round-to-nearest double precision. No outward
//! rounding is applied, so inclusion holds up to ordinary floating-point
//! error (tests use an absolute slack of `1e-9`).

use std::fmt;
use std::ops::{Add, Mul, Sub};

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed real interval `[lo, hi]` with `lo <= hi`.
///
/// The degenerate case `lo == hi` represents a crisp number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInterval")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

#[derive(Deserialize)]
struct RawInterval {
    lo: f64,
    hi: f64,
}

impl TryFrom<RawInterval> for Interval {
    type Error = Error;

    fn try_from(raw: RawInterval) -> Result<Self> {
        Interval::new(raw.lo, raw.hi)
    }
}

impl Interval {
    /// Builds `[lo, hi]`. Inverted or non-finite bounds are rejected, never swapped.
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidInterval { lo, hi, reason: "bounds must be finite" });
        }
        if lo > hi {
            return Err(Error::InvalidInterval { lo, hi, reason: "lower bound exceeds upper bound" });
        }
        Ok(Self { lo, hi })
    }

    /// The degenerate interval `[x, x]`.
    pub fn point(x: f64) -> Self {
        debug_assert!(x.is_finite());
        Self { lo: x, hi: x }
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    /// Closed-endpoint membership test.
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// `[f(lo), f(hi)]`; only valid for nondecreasing `f`.
    pub fn map_monotone(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { lo: f(self.lo), hi: f(self.hi) }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl Add for Interval {
    type Output = Interval;

    fn add(self, rhs: Interval) -> Interval {
        Interval { lo: self.lo + rhs.lo, hi: self.hi + rhs.hi }
    }
}

impl Sub for Interval {
    type Output = Interval;

    fn sub(self, rhs: Interval) -> Interval {
        Interval { lo: self.lo - rhs.hi, hi: self.hi - rhs.lo }
    }
}

impl Mul for Interval {
    type Output = Interval;

    fn mul(self, rhs: Interval) -> Interval {
        let (lo, hi) = corner_bounds(self.lo, self.hi, rhs.lo, rhs.hi);
        Interval { lo, hi }
    }
}

/// Min and max over the four corner products, in the order
/// `a_lo*b_lo, a_lo*b_hi, a_hi*b_lo, a_hi*b_hi`.
#[inline]
pub(crate) fn corner_bounds(a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> (f64, f64) {
    let c = [a_lo * b_lo, a_lo * b_hi, a_hi * b_lo, a_hi * b_hi];
    let mut lo = c[0];
    let mut hi = c[0];
    for &v in &c[1..] {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    (lo, hi)
}

/// An interval matrix `[lo, hi]`: the set of real matrices bounded entrywise.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMatrix {
    lo: Array2<f64>,
    hi: Array2<f64>,
}

impl IntervalMatrix {
    pub fn new(lo: Array2<f64>, hi: Array2<f64>) -> Result<Self> {
        if lo.dim() != hi.dim() {
            return Err(Error::shape(
                "IntervalMatrix::new",
                format!("lower bounds are {:?}, upper bounds are {:?}", lo.dim(), hi.dim()),
            ));
        }
        for (&l, &h) in lo.iter().zip(hi.iter()) {
            if !l.is_finite() || !h.is_finite() {
                return Err(Error::InvalidInterval { lo: l, hi: h, reason: "bounds must be finite" });
            }
            if l > h {
                return Err(Error::InvalidInterval { lo: l, hi: h, reason: "lower bound exceeds upper bound" });
            }
        }
        Ok(Self { lo, hi })
    }

    /// Every entry degenerate at the given crisp matrix.
    pub fn point(m: Array2<f64>) -> Self {
        Self { lo: m.clone(), hi: m }
    }

    pub(crate) fn from_bounds_unchecked(lo: Array2<f64>, hi: Array2<f64>) -> Self {
        debug_assert_eq!(lo.dim(), hi.dim());
        Self { lo, hi }
    }

    pub fn rows(&self) -> usize {
        self.lo.nrows()
    }

    pub fn cols(&self) -> usize {
        self.lo.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.lo.dim()
    }

    pub fn lo(&self) -> &Array2<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &Array2<f64> {
        &self.hi
    }

    pub fn get(&self, i: usize, j: usize) -> Interval {
        Interval { lo: self.lo[[i, j]], hi: self.hi[[i, j]] }
    }

    pub fn width(&self) -> Array2<f64> {
        &self.hi - &self.lo
    }

    /// True iff every entry of `m` lies within the corresponding interval.
    pub fn contains(&self, m: &Array2<f64>) -> bool {
        m.dim() == self.dim()
            && Zip::from(&self.lo).and(&self.hi).and(m).all(|&l, &h, &x| l <= x && x <= h)
    }

    pub fn add(&self, other: &IntervalMatrix) -> Result<IntervalMatrix> {
        self.same_shape("IntervalMatrix::add", other)?;
        Ok(Self { lo: &self.lo + &other.lo, hi: &self.hi + &other.hi })
    }

    pub fn sub(&self, other: &IntervalMatrix) -> Result<IntervalMatrix> {
        self.same_shape("IntervalMatrix::sub", other)?;
        Ok(Self { lo: &self.lo - &other.hi, hi: &self.hi - &other.lo })
    }

    /// Entrywise interval product.
    pub fn hadamard(&self, other: &IntervalMatrix) -> Result<IntervalMatrix> {
        self.same_shape("IntervalMatrix::hadamard", other)?;
        let mut lo = Array2::zeros(self.dim());
        let mut hi = Array2::zeros(self.dim());
        Zip::from(&mut lo)
            .and(&mut hi)
            .and(&self.lo)
            .and(&self.hi)
            .and(&other.lo)
            .and(&other.hi)
            .for_each(|l, h, &al, &ah, &bl, &bh| {
                let (mn, mx) = corner_bounds(al, ah, bl, bh);
                *l = mn;
                *h = mx;
            });
        Ok(Self { lo, hi })
    }

    /// Interval matrix product.
    ///
    /// Each entry sums, over the shared index, the elementwise min (resp. max)
    /// of the four corner-product vectors.
    pub fn matmul(&self, other: &IntervalMatrix) -> Result<IntervalMatrix> {
        if self.cols() != other.rows() {
            return Err(Error::shape(
                "IntervalMatrix::matmul",
                format!("{:?} times {:?}", self.dim(), other.dim()),
            ));
        }
        let (m, p) = self.dim();
        let n = other.cols();
        let mut lo = Array2::zeros((m, n));
        let mut hi = Array2::zeros((m, n));
        for i in 0..m {
            for j in 0..n {
                let mut sl = 0.0;
                let mut sh = 0.0;
                for k in 0..p {
                    let (mn, mx) = corner_bounds(
                        self.lo[[i, k]],
                        self.hi[[i, k]],
                        other.lo[[k, j]],
                        other.hi[[k, j]],
                    );
                    sl += mn;
                    sh += mx;
                }
                lo[[i, j]] = sl;
                hi[[i, j]] = sh;
            }
        }
        Ok(Self { lo, hi })
    }

    /// Applies a nondecreasing scalar function endpointwise.
    pub fn map_monotone(&self, f: impl Fn(f64) -> f64) -> IntervalMatrix {
        Self { lo: self.lo.mapv(&f), hi: self.hi.mapv(&f) }
    }

    fn same_shape(&self, op: &'static str, other: &IntervalMatrix) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.dim(), other.dim())));
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
