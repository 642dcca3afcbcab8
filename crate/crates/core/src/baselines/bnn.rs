use std::time::Instant;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use super::gaussian::{aggregate, check_gaussian, rollout_nll, Predictive};
use crate::autodiff::{softplus, Tape};
use crate::error::{Error, Result};
use crate::nets::graph::rollout;
use crate::nets::{init_crisp, simulate_gaussian, CrispParams, ModelSpec};
use crate::rng::{self, Rng};
use crate::training::record::Best;
use crate::training::strategies::{finite, finite_grads, Batcher};
use crate::training::{Adam, EpochRecord, MiniBatch, Stage, TrainOptions, TrainRecord, WindowedBatch};

/// Mean-field Gaussian posterior; standard deviations are `softplus(rho_raw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: CrispParams,
    pub rho_raw: Vec<Array2<f64>>,
}

fn inv_softplus(x: f64) -> f64 {
    x.exp_m1().ln()
}

impl Posterior {
    /// Means from the crisp initializer, standard deviations `0.01 * rho`.
    pub fn init(spec: &ModelSpec, seed: u64, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::arg("rho", format!("prior scale must be positive, got {rho}")));
        }
        let mean = init_crisp(spec, seed);
        let r = inv_softplus(0.01 * rho);
        let rho_raw = mean.tensors.iter().map(|t| Array2::from_elem(t.dim(), r)).collect();
        Ok(Posterior { mean, rho_raw })
    }

    pub fn sigma(&self) -> Vec<Array2<f64>> {
        self.rho_raw.iter().map(|r| r.mapv(softplus)).collect()
    }

    pub fn sample(&self, rng: &mut Rng) -> CrispParams {
        let tensors = self
            .mean
            .tensors
            .iter()
            .zip(self.sigma())
            .map(|(m, s)| {
                let mut t = m.clone();
                t.zip_mut_with(&s, |v, &sd| *v += sd * Distribution::<f64>::sample(&StandardNormal, rng));
                t
            })
            .collect();
        CrispParams { tensors }
    }
}

/// `KL(N(m, s^2) || N(0, rho^2))` summed over entries.
pub fn kl_diag(mean: &[Array2<f64>], sigma: &[Array2<f64>], rho: f64) -> f64 {
    mean.iter()
        .zip(sigma)
        .flat_map(|(m, s)| m.iter().zip(s.iter()))
        .map(|(&m, &s)| (rho / s).ln() + (s * s + m * m) / (2.0 * rho * rho) - 0.5)
        .sum()
}

/// Single-sample negative ELBO of one mini-batch and its gradients.
#[derive(Debug, Clone)]
pub struct ElboEval {
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
    pub grad_mean: Vec<Array2<f64>>,
    pub grad_rho: Vec<Array2<f64>>,
}

/// `theta = mean + softplus(rho_raw) * eps`; loss `nll + kl_weight * KL`.
pub fn elbo(spec: &ModelSpec, post: &Posterior, eps: &[Array2<f64>], mb: &MiniBatch, rho: f64, kl_weight: f64) -> Result<ElboEval> {
    if eps.len() != post.rho_raw.len() || eps.iter().zip(&post.rho_raw).any(|(e, r)| e.dim() != r.dim()) {
        return Err(Error::shape("elbo", "noise does not match the posterior"));
    }
    let mut tape = Tape::new();
    let means: Vec<_> = post.mean.tensors.iter().map(|m| tape.param(m.clone())).collect();
    let raws: Vec<_> = post.rho_raw.iter().map(|r| tape.param(r.clone())).collect();
    let inv = 1.0 / (2.0 * rho * rho);
    let mut theta = Vec::with_capacity(means.len());
    let mut kl_parts = Vec::with_capacity(means.len());
    let mut count = 0usize;
    for ((&m, &r), e) in means.iter().zip(&raws).zip(eps) {
        let sd = tape.softplus(r);
        let noise = tape.constant(e.clone());
        let jitter = tape.hadamard(sd, noise);
        theta.push(tape.add(m, jitter));
        let s2 = tape.square(sd);
        let m2 = tape.square(m);
        let q = tape.add(s2, m2);
        let q = tape.scale(q, inv);
        let ls = tape.ln(sd);
        let t = tape.sub(q, ls);
        kl_parts.push(tape.sum(t));
        count += e.len();
    }
    let mut kl = kl_parts[0];
    for &p in &kl_parts[1..] {
        kl = tape.add(kl, p);
    }
    let kl = tape.add_scalar(kl, count as f64 * (rho.ln() - 0.5));
    let ro = rollout(&mut tape, spec, &theta, None, &mb.u, &mb.y1, None)?;
    let nll = rollout_nll(&mut tape, &ro, mb);
    let wkl = tape.scale(kl, kl_weight);
    let loss = tape.add(nll, wkl);
    let g = tape.backward(loss)?;
    Ok(ElboEval {
        loss: tape.scalar(loss),
        nll: tape.scalar(nll),
        kl: tape.scalar(kl),
        grad_mean: means.iter().map(|&v| g.param(v).clone()).collect(),
        grad_rho: raws.iter().map(|&v| g.param(v).clone()).collect(),
    })
}

/// Variational training against the prior `N(0, rho^2 I)`. The KL term is
/// spread over every modelled training point so an epoch counts it once.
pub fn bnn_train(spec: &ModelSpec, data: &WindowedBatch, opts: &TrainOptions, rho: f64) -> Result<(Posterior, TrainRecord)> {
    check_gaussian(spec, data)?;
    let mut post = Posterior::init(spec, opts.seed, rho)?;
    let kl_weight = 1.0 / (data.len() * (data.window - 1)) as f64;
    let mut noise = rng::stream(opts.seed, "bnn/eps");
    let mut opt_m = Adam::new(opts.adam, &post.mean.tensors);
    let mut opt_r = Adam::new(opts.adam, &post.rho_raw);
    let mut batcher = Batcher::new(opts.seed, "shuffle", data.len(), opts.batch_size)?;
    let mut best = Best::initial(Stage::Baseline, &post);
    let mut record = TrainRecord::default();
    for epoch in 1..=opts.epochs {
        let t0 = Instant::now();
        let (mut t_loss, mut t_nll, mut t_kl) = (0.0, 0.0, 0.0);
        let batches = batcher.epoch();
        for (bi, rows) in batches.iter().enumerate() {
            let eps: Vec<Array2<f64>> = post
                .rho_raw
                .iter()
                .map(|r| Array2::from_shape_simple_fn(r.dim(), || StandardNormal.sample(&mut noise)))
                .collect();
            let ev = elbo(spec, &post, &eps, &data.select(rows), rho, kl_weight)?;
            t_loss += finite("elbo", epoch, bi + 1, ev.loss)?;
            t_nll += ev.nll;
            t_kl += ev.kl;
            let gm: Vec<_> = ev.grad_mean.iter().collect();
            let gr: Vec<_> = ev.grad_rho.iter().collect();
            finite_grads("elbo gradient", epoch, bi + 1, &gm)?;
            finite_grads("elbo gradient", epoch, bi + 1, &gr)?;
            opt_m.step(&mut post.mean.tensors, &gm)?;
            opt_r.step(&mut post.rho_raw, &gr)?;
        }
        let n = batches.len() as f64;
        best.offer(epoch, t_loss / n, &post);
        let mut e = EpochRecord::new(Stage::Baseline, epoch);
        e.nll = Some(t_nll / n);
        e.kl = Some(t_kl / n);
        e.seconds = t0.elapsed().as_secs_f64();
        record.epochs.push(e);
    }
    let (post, snap) = best.into_parts();
    record.best_theta = snap;
    Ok((post, record))
}

/// Each posterior sample rolls out closed loop on its own mean recursion.
pub fn bnn_predict(spec: &ModelSpec, post: &Posterior, u: &Array2<f64>, y1: &[f64], samples: usize, seed: u64) -> Result<Predictive> {
    if samples < 2 {
        return Err(Error::arg("samples", format!("need at least 2 samples, got {samples}")));
    }
    let mut mus = Vec::with_capacity(samples);
    let mut vars = Vec::with_capacity(samples);
    for s in 0..samples {
        let theta = post.sample(&mut rng::indexed_stream(seed, "bnn/predict", s));
        let r = simulate_gaussian(spec, &theta, u, y1, None)?;
        mus.push(r.mu);
        vars.push(r.var);
    }
    aggregate(&mus, &vars)
}
