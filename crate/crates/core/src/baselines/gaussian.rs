use std::time::Instant;

use ndarray::{s, Array2};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::nets::graph::{rollout, theta_vars, GraphRollout};
use crate::nets::{init_crisp, CrispParams, DropoutSampler, ModelSpec, Rollout};
use crate::objectives::nll_node;
use crate::rng;
use crate::training::record::Best;
use crate::training::strategies::{collect, finite, finite_grads, Batcher};
use crate::training::{Adam, EpochRecord, MiniBatch, Stage, TrainOptions, TrainRecord, WindowedBatch};

/// Two-sided standard normal quantile for coverage `alpha`.
pub fn z_score(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::arg("alpha", format!("coverage must lie in (0, 1), got {alpha}")));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(0.5 * (1.0 + alpha)))
}

pub fn gaussian_pi(mu: f64, sigma: f64, alpha: f64) -> Result<Interval> {
    if !(sigma >= 0.0) {
        return Err(Error::arg("sigma", format!("must be nonnegative, got {sigma}")));
    }
    let z = z_score(alpha)?;
    Interval::new(mu - z * sigma, mu + z * sigma)
}

/// Aggregated predictive moments per step, `B x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictive {
    pub mean: Array2<f64>,
    pub var: Array2<f64>,
}

impl Predictive {
    pub fn intervals(&self, alpha: f64) -> Result<Rollout> {
        let z = z_score(alpha)?;
        let sd = self.var.mapv(f64::sqrt);
        Ok(Rollout { y: self.mean.clone(), lo: &self.mean - &(&sd * z), hi: &self.mean + &(&sd * z) })
    }
}

/// Mixture moments: mean of means and mean variance plus the population
/// variance of the means.
pub fn aggregate(mus: &[Array2<f64>], vars: &[Array2<f64>]) -> Result<Predictive> {
    if mus.is_empty() || mus.len() != vars.len() {
        return Err(Error::shape("aggregate", format!("{} means vs {} variances", mus.len(), vars.len())));
    }
    let dim = mus[0].dim();
    if mus.iter().chain(vars).any(|m| m.dim() != dim) {
        return Err(Error::shape("aggregate", "sample shapes differ"));
    }
    let k = mus.len() as f64;
    let mut mean = mus.iter().fold(Array2::zeros(dim), |acc, m| acc + m) / k;
    for (idx, v) in mean.indexed_iter_mut() {
        let first = mus[0][idx];
        if mus.iter().all(|m| m[idx] == first) {
            *v = first;
        }
    }
    let mut var = vars.iter().fold(Array2::zeros(dim), |acc, v| acc + v) / k;
    for m in mus {
        let d = m - &mean;
        var += &(&d * &d / k);
    }
    Ok(Predictive { mean, var })
}

/// Gaussian NLL of a two-output rollout over steps `2..=N`.
pub(crate) fn rollout_nll(tape: &mut Tape, ro: &GraphRollout, mb: &MiniBatch) -> Var {
    let n = mb.target.nrows();
    let target = tape.constant(mb.target.slice(s![1.., ..]).to_owned());
    let mu = tape.slice_rows(ro.y, 1, n - 1);
    nll_node(tape, target, mu, ro.var.expect("two-output rollout"))
}

pub(crate) fn check_gaussian(spec: &ModelSpec, data: &WindowedBatch) -> Result<()> {
    spec.validate()?;
    if spec.outputs != 2 {
        return Err(Error::InvalidSpec("baselines need a two-output Gaussian head".into()));
    }
    if data.window < 2 {
        return Err(Error::arg("window", "training windows need at least 2 steps"));
    }
    Ok(())
}

/// NLL training of a Gaussian-head network, optionally with inverted dropout.
pub fn train_gaussian(
    spec: &ModelSpec,
    data: &WindowedBatch,
    opts: &TrainOptions,
    dropout: Option<f64>,
) -> Result<(CrispParams, TrainRecord)> {
    check_gaussian(spec, data)?;
    let mut sampler = dropout.map(|r| DropoutSampler::new(r, rng::stream(opts.seed, "dropout/train"))).transpose()?;
    let mut theta = init_crisp(spec, opts.seed);
    let mut opt = Adam::new(opts.adam, &theta.tensors);
    let mut batcher = Batcher::new(opts.seed, "shuffle", data.len(), opts.batch_size)?;
    let mut best = Best::initial(Stage::Baseline, &theta);
    let mut record = TrainRecord::default();
    for epoch in 1..=opts.epochs {
        let t0 = Instant::now();
        let mut total = 0.0;
        let batches = batcher.epoch();
        for (bi, rows) in batches.iter().enumerate() {
            let mb = data.select(rows);
            let mut tape = Tape::new();
            let th = theta_vars(&mut tape, &theta, true);
            let ro = rollout(&mut tape, spec, &th, None, &mb.u, &mb.y1, sampler.as_mut())?;
            let loss = rollout_nll(&mut tape, &ro, &mb);
            total += finite("nll", epoch, bi + 1, tape.scalar(loss))?;
            let g = tape.backward(loss)?;
            let refs = collect(&g, &th);
            finite_grads("nll gradient", epoch, bi + 1, &refs)?;
            opt.step(&mut theta.tensors, &refs)?;
        }
        let mean = total / batches.len() as f64;
        best.offer(epoch, mean, &theta);
        let mut e = EpochRecord::new(Stage::Baseline, epoch);
        e.nll = Some(mean);
        e.seconds = t0.elapsed().as_secs_f64();
        record.epochs.push(e);
    }
    let (theta, snap) = best.into_parts();
    record.best_theta = snap;
    Ok((theta, record))
}

/// Seed of ensemble member `m`.
pub fn member_seed(seed: u64, m: usize) -> u64 {
    use rand::RngCore;
    rng::indexed_stream(seed, "ensemble", m).next_u64()
}

/// Independently seeded members trained separately.
pub fn ensemble_train(spec: &ModelSpec, data: &WindowedBatch, opts: &TrainOptions, members: usize) -> Result<(Vec<CrispParams>, Vec<TrainRecord>)> {
    if members < 2 {
        return Err(Error::arg("members", format!("an ensemble needs at least 2 members, got {members}")));
    }
    let mut thetas = Vec::with_capacity(members);
    let mut records = Vec::with_capacity(members);
    for m in 0..members {
        let o = TrainOptions { seed: member_seed(opts.seed, m), ..*opts };
        let (t, r) = train_gaussian(spec, data, &o, None)?;
        thetas.push(t);
        records.push(r);
    }
    Ok((thetas, records))
}

pub fn ensemble_predict(spec: &ModelSpec, members: &[CrispParams], u: &Array2<f64>, y1: &[f64]) -> Result<Predictive> {
    if members.len() < 2 {
        return Err(Error::arg("members", format!("an ensemble needs at least 2 members, got {}", members.len())));
    }
    let mut mus = Vec::new();
    let mut vars = Vec::new();
    for m in members {
        let r = crate::nets::simulate_gaussian(spec, m, u, y1, None)?;
        mus.push(r.mu);
        vars.push(r.var);
    }
    aggregate(&mus, &vars)
}

pub fn mcdropout_train(spec: &ModelSpec, data: &WindowedBatch, opts: &TrainOptions, rate: f64) -> Result<(CrispParams, TrainRecord)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::arg("dropout", format!("rate must lie in [0, 1), got {rate}")));
    }
    train_gaussian(spec, data, opts, Some(rate))
}

/// `samples` stochastic closed-loop rollouts, each with fresh masks.
pub fn mcdropout_predict(
    spec: &ModelSpec,
    theta: &CrispParams,
    u: &Array2<f64>,
    y1: &[f64],
    rate: f64,
    samples: usize,
    seed: u64,
) -> Result<Predictive> {
    if samples < 2 {
        return Err(Error::arg("samples", format!("need at least 2 samples, got {samples}")));
    }
    let mut mus = Vec::with_capacity(samples);
    let mut vars = Vec::with_capacity(samples);
    for s in 0..samples {
        let mut d = DropoutSampler::new(rate, rng::indexed_stream(seed, "dropout/predict", s))?;
        let r = crate::nets::simulate_gaussian(spec, theta, u, y1, Some(&mut d))?;
        mus.push(r.mu);
        vars.push(r.var);
    }
    aggregate(&mus, &vars)
}
