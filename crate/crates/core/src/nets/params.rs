use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::spec::{ModelKind, ModelSpec, TensorRole};
use crate::error::{Error, Result};
use crate::interval::IntervalMatrix;
use crate::rng;

/// Crisp parameters θ in [`ModelSpec::layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct CrispParams {
    pub tensors: Vec<Array2<f64>>,
}

/// Raw margins Δ′ (before the positivity map), one pair per crisp tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyParams {
    pub lower: Vec<Array2<f64>>,
    pub upper: Vec<Array2<f64>>,
}

/// Materialized parameter intervals θ̃.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalParams {
    pub tensors: Vec<IntervalMatrix>,
}

fn check_shapes(spec: &ModelSpec, tensors: &[Array2<f64>], what: &'static str) -> Result<()> {
    let layout = spec.layout();
    if layout.len() != tensors.len() {
        return Err(Error::shape(what, format!("expected {} tensors, got {}", layout.len(), tensors.len())));
    }
    for (t, info) in tensors.iter().zip(&layout) {
        if t.dim() != (info.rows, info.cols) {
            return Err(Error::shape(
                what,
                format!("{} is {}x{}, expected {}x{}", info.name, t.nrows(), t.ncols(), info.rows, info.cols),
            ));
        }
    }
    Ok(())
}

fn digest_tensors<'a>(h: &mut Sha256, tensors: impl IntoIterator<Item = &'a Array2<f64>>) {
    for t in tensors {
        h.update((t.nrows() as u64).to_le_bytes());
        h.update((t.ncols() as u64).to_le_bytes());
        for v in t.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
}

impl CrispParams {
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        check_shapes(spec, &self.tensors, "crisp parameters")
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        CrispParams { tensors: spec.layout().iter().map(|t| Array2::zeros((t.rows, t.cols))).collect() }
    }

    /// Hex SHA-256 over shapes and exact bit patterns.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        digest_tensors(&mut h, &self.tensors);
        hex::encode(h.finalize())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl UncertaintyParams {
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        check_shapes(spec, &self.lower, "lower margins")?;
        check_shapes(spec, &self.upper, "upper margins")
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        let z = CrispParams::zeros(spec).tensors;
        UncertaintyParams { lower: z.clone(), upper: z }
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        digest_tensors(&mut h, self.lower.iter().chain(&self.upper));
        hex::encode(h.finalize())
    }
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

fn orthogonal(rng: &mut impl Rng, n: usize) -> Array2<f64> {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let (q, r) = (qr.q(), qr.r());
    Array2::from_shape_fn((n, n), |(i, j)| {
        let s = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        q[(i, j)] * s
    })
}

/// Glorot-uniform weights, orthogonal recurrent weights, zero biases except
/// a unit forget-gate bias.
pub fn init_crisp(spec: &ModelSpec, seed: u64) -> CrispParams {
    let mut rng = rng::stream(seed, "init");
    let tensors = spec
        .layout()
        .iter()
        .map(|t| match t.role {
            TensorRole::Weight => glorot(&mut rng, t.rows, t.cols),
            TensorRole::Recurrent => orthogonal(&mut rng, t.rows),
            TensorRole::Bias if spec.kind == ModelKind::Lstm && t.name.ends_with(".b_f") => Array2::ones((t.rows, 1)),
            TensorRole::Bias => Array2::zeros((t.rows, 1)),
        })
        .collect();
    CrispParams { tensors }
}

/// Raw margins with σ_Δ(Δ′) = |θ|·r, using `r_h` for hidden layers and
/// `r_o` for the output layer.
pub fn init_uncertainty(spec: &ModelSpec, theta: &CrispParams, r_h: f64, r_o: f64) -> Result<UncertaintyParams> {
    for (name, r) in [("r_h", r_h), ("r_o", r_o)] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::arg(name, format!("uncertainty rate must lie in [0, 1], got {r}")));
        }
    }
    theta.check(spec)?;
    let lower: Vec<Array2<f64>> = theta
        .tensors
        .iter()
        .zip(spec.layout())
        .map(|(t, info)| {
            let r = if info.is_output { r_o } else { r_h };
            t.mapv(|v| v.abs() * r)
        })
        .collect();
    Ok(UncertaintyParams { upper: lower.clone(), lower })
}

/// θ̃ = [θ − σ_Δ(Δ′_lower), θ + σ_Δ(Δ′_upper)].
pub fn materialize(spec: &ModelSpec, theta: &CrispParams, margins: &UncertaintyParams) -> Result<IntervalParams> {
    theta.check(spec)?;
    margins.check(spec)?;
    let trick = spec.trick;
    let tensors = theta
        .tensors
        .iter()
        .zip(margins.lower.iter().zip(&margins.upper))
        .map(|(t, (dl, du))| {
            let lo = t - &dl.mapv(|v| trick.apply(v));
            let hi = t + &du.mapv(|v| trick.apply(v));
            IntervalMatrix::new(lo, hi)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IntervalParams { tensors })
}

impl IntervalParams {
    /// Draws θ_s uniformly from every parameter interval.
    pub fn sample(&self, rng: &mut impl Rng) -> CrispParams {
        let tensors = self
            .tensors
            .iter()
            .map(|m| {
                let mut out = m.lo().clone();
                for (o, &h) in out.iter_mut().zip(m.hi().iter()) {
                    if h > *o {
                        *o = rng.random_range(*o..=h);
                    }
                }
                out
            })
            .collect();
        CrispParams { tensors }
    }

    pub fn contains(&self, theta: &CrispParams) -> bool {
        self.tensors.len() == theta.tensors.len() && self.tensors.iter().zip(&theta.tensors).all(|(iv, t)| iv.contains(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::spec::{Lags, Trick};
    use ndarray::array;

    fn spec(kind: ModelKind, trick: Trick) -> ModelSpec {
        ModelSpec::new(kind, vec![6, 3], Lags { n_x: 2, n_d: 0, n_y: 1 }, trick, 0.9).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let s = spec(ModelKind::Lstm, Trick::Abs);
        assert_eq!(init_crisp(&s, 4), init_crisp(&s, 4));
        assert_ne!(init_crisp(&s, 4), init_crisp(&s, 5));
        assert_eq!(init_crisp(&s, 4).digest(), init_crisp(&s, 4).digest());
    }

    #[test]
    fn glorot_bounds_hold() {
        let s = spec(ModelKind::Node, Trick::Abs);
        let p = init_crisp(&s, 1);
        for (t, info) in p.tensors.iter().zip(s.layout()) {
            if info.role == TensorRole::Weight {
                let bound = (6.0 / (info.rows + info.cols) as f64).sqrt();
                assert!(t.iter().all(|v| v.abs() <= bound));
                assert!(t.iter().any(|v| v.abs() > bound / 4.0));
            } else {
                assert!(t.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn lstm_recurrent_weights_are_orthogonal_and_forget_bias_is_one() {
        let s = spec(ModelKind::Lstm, Trick::Abs);
        let p = init_crisp(&s, 2);
        for (t, info) in p.tensors.iter().zip(s.layout()) {
            match info.role {
                TensorRole::Recurrent => {
                    let qtq = t.t().dot(t);
                    for ((i, j), v) in qtq.indexed_iter() {
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!((v - want).abs() < 1e-10);
                    }
                }
                TensorRole::Bias if info.name.ends_with("b_f") => assert!(t.iter().all(|&v| v == 1.0)),
                TensorRole::Bias => assert!(t.iter().all(|&v| v == 0.0)),
                TensorRole::Weight => {}
            }
        }
    }

    #[test]
    fn uncertainty_init_scales_magnitudes() {
        let s = spec(ModelKind::Node, Trick::Abs);
        let p = init_crisp(&s, 3);
        let m = init_uncertainty(&s, &p, 0.0, 1.0).unwrap();
        let iv = materialize(&s, &p, &m).unwrap();
        for (k, info) in s.layout().iter().enumerate() {
            if info.is_output {
                assert_eq!(iv.tensors[k].lo(), &p.tensors[k].mapv(|v| v - v.abs()));
                assert_eq!(iv.tensors[k].hi(), &p.tensors[k].mapv(|v| v + v.abs()));
            } else {
                assert_eq!(iv.tensors[k].width(), Array2::<f64>::zeros(p.tensors[k].dim()));
            }
        }
        assert!(init_uncertainty(&s, &p, 1.2, 0.5).is_err());
        assert!(init_uncertainty(&s, &p, 0.5, -0.1).is_err());
    }

    #[test]
    fn margin_from_negative_entry() {
        let s = ModelSpec::new(ModelKind::Feedforward, vec![1], Lags { n_x: 0, n_d: 0, n_y: 0 }, Trick::Abs, 0.9).unwrap();
        let theta = CrispParams { tensors: vec![array![[-0.4]], array![[0.0]], array![[1.0]], array![[0.0]]] };
        let m = init_uncertainty(&s, &theta, 0.5, 0.5).unwrap();
        let iv = materialize(&s, &theta, &m).unwrap();
        assert!((iv.tensors[0].lo()[[0, 0]] + 0.6).abs() < 1e-15);
        assert!((iv.tensors[0].hi()[[0, 0]] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn materialize_examples() {
        let s = ModelSpec::new(ModelKind::Feedforward, vec![1], Lags { n_x: 0, n_d: 0, n_y: 0 }, Trick::Abs, 0.9).unwrap();
        let theta = CrispParams { tensors: vec![array![[1.0]]; 4] };
        let m = UncertaintyParams { lower: vec![array![[0.1]]; 4], upper: vec![array![[0.3]]; 4] };
        let iv = materialize(&s, &theta, &m).unwrap();
        assert!((iv.tensors[0].lo()[[0, 0]] - 0.9).abs() < 1e-15);
        assert!((iv.tensors[0].hi()[[0, 0]] - 1.3).abs() < 1e-15);

        let zero = materialize(&s, &theta, &UncertaintyParams::zeros(&s)).unwrap();
        assert!(zero.tensors.iter().all(|t| t.lo() == t.hi()));

        let mut relu = s.clone();
        relu.trick = Trick::Relu;
        let m = UncertaintyParams { lower: vec![array![[-3.0]]; 4], upper: vec![array![[0.3]]; 4] };
        let iv = materialize(&relu, &theta, &m).unwrap();
        assert_eq!(iv.tensors[0].lo()[[0, 0]], 1.0);

        let abs = materialize(&s, &theta, &m).unwrap();
        assert_eq!(abs.tensors[0].lo()[[0, 0]], -2.0);
        assert!(abs.contains(&theta));
    }

    #[test]
    fn shape_checks() {
        let s = spec(ModelKind::Node, Trick::Abs);
        let mut p = init_crisp(&s, 0);
        assert!(p.check(&s).is_ok());
        p.tensors[1] = Array2::zeros((2, 2));
        assert!(matches!(p.check(&s), Err(Error::Shape { .. })));
        p.tensors.pop();
        assert!(p.check(&s).is_err());
    }

    #[test]
    fn samples_stay_inside() {
        let s = spec(ModelKind::Lstm, Trick::Abs);
        let p = init_crisp(&s, 0);
        let iv = materialize(&s, &p, &init_uncertainty(&s, &p, 0.4, 1.0).unwrap()).unwrap();
        let mut r = rng::stream(0, "test");
        for _ in 0..20 {
            assert!(iv.contains(&iv.sample(&mut r)));
        }
    }
}
