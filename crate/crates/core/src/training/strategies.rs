use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::gradnorm::{gradnorm_update, ScalePair};
use super::record::{Best, EpochRecord, Stage, TrainRecord};
use super::window::{MiniBatch, WindowedBatch};
use crate::autodiff::{Gradients, Tape, Var};
use crate::dataio::RunConfig;
use crate::error::{Error, Result};
use crate::nets::graph::{interval_vars, margin_vars, rollout, theta_vars};
use crate::nets::{init_crisp, init_uncertainty, CrispParams, ModelSpec, UncertaintyParams};
use crate::objectives::{mse_node, rqr_w_node, DEFAULT_LAMBDA};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lr_scales: f64,
    pub lambda: f64,
    pub beta: f64,
    pub r_h: f64,
    pub r_o: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 300,
            batch_size: 32,
            adam: AdamConfig::default(),
            lr_scales: 0.025,
            lambda: DEFAULT_LAMBDA,
            beta: 0.1,
            r_h: 1.0,
            r_o: 1.0,
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn from_config(c: &RunConfig) -> Self {
        let o = &c.optimizer;
        TrainOptions {
            epochs: c.epochs,
            batch_size: c.batch_size,
            adam: AdamConfig { lr: o.lr, beta1: o.beta1, beta2: o.beta2, eps: o.eps },
            lr_scales: o.lr_scales,
            lambda: c.lambda,
            beta: c.beta,
            r_h: c.r_h,
            r_o: c.r_o,
            seed: c.seed,
        }
    }
}

/// Switches for ablating the joint strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointOptions {
    pub initial_scales: ScalePair,
    pub freeze_scales: bool,
    pub update_margins: bool,
}

impl Default for JointOptions {
    fn default() -> Self {
        JointOptions { initial_scales: ScalePair::default(), freeze_scales: false, update_margins: true }
    }
}

/// Trained interval network parameters.
#[derive(Debug, Clone)]
pub struct IntervalModel {
    pub theta: CrispParams,
    pub margins: UncertaintyParams,
    pub record: TrainRecord,
}

/// Per-epoch shuffled mini-batch order; the final partial batch is kept.
pub(crate) struct Batcher {
    rng: Rng,
    order: Vec<usize>,
    size: usize,
}

impl Batcher {
    pub fn new(seed: u64, label: &str, n: usize, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::arg("batch_size", "must be at least 1"));
        }
        if n == 0 {
            return Err(Error::Empty("training windows"));
        }
        Ok(Batcher { rng: rng::stream(seed, label), order: (0..n).collect(), size })
    }

    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        self.order.shuffle(&mut self.rng);
        self.order.chunks(self.size).map(|c| c.to_vec()).collect()
    }

    #[cfg(test)]
    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.size)
    }
}

pub(crate) fn collect<'a>(g: &'a Gradients, vars: &[Var]) -> Vec<&'a Array2<f64>> {
    vars.iter().map(|&v| g.param(v)).collect()
}

pub(crate) fn finite(what: &'static str, epoch: usize, batch: usize, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { what, epoch, batch })
    }
}

pub(crate) fn finite_grads(what: &'static str, epoch: usize, batch: usize, g: &[&Array2<f64>]) -> Result<()> {
    if g.iter().all(|a| a.iter().all(|x| x.is_finite())) {
        Ok(())
    } else {
        Err(Error::NonFinite { what, epoch, batch })
    }
}

fn norm(gs: &[&Array2<f64>]) -> f64 {
    gs.iter().map(|a| a.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
}

fn combine(a: &[&Array2<f64>], wa: f64, b: &[&Array2<f64>], wb: f64) -> Vec<Array2<f64>> {
    a.iter().zip(b).map(|(x, y)| *x * wa + *y * wb).collect()
}

fn crisp_batch(spec: &ModelSpec, theta: &CrispParams, mb: &MiniBatch) -> Result<(f64, Vec<Array2<f64>>)> {
    let mut tape = Tape::new();
    let th = theta_vars(&mut tape, theta, true);
    let ro = rollout(&mut tape, spec, &th, None, &mb.u, &mb.y1, None)?;
    let target = tape.constant(mb.target.clone());
    let loss = mse_node(&mut tape, ro.y, target);
    let g = tape.backward(loss)?;
    Ok((tape.scalar(loss), collect(&g, &th).into_iter().cloned().collect()))
}

fn margin_batch(spec: &ModelSpec, theta: &CrispParams, m: &UncertaintyParams, mb: &MiniBatch, lambda: f64) -> Result<(f64, Vec<Array2<f64>>)> {
    let mut tape = Tape::new();
    let th = theta_vars(&mut tape, theta, false);
    let (lo, hi) = margin_vars(&mut tape, m);
    let iv = interval_vars(&mut tape, spec.trick, &th, &lo, &hi);
    let ro = rollout(&mut tape, spec, &th, Some(&iv), &mb.u, &mb.y1, None)?;
    let (blo, bhi) = ro.bounds.expect("interval rollout");
    let target = tape.constant(mb.target.clone());
    let loss = rqr_w_node(&mut tape, target, blo, bhi, spec.alpha, lambda);
    let g = tape.backward(loss)?;
    let grads = lo.iter().chain(&hi).map(|&v| g.param(v).clone()).collect();
    Ok((tape.scalar(loss), grads))
}

/// Losses and gradients of one joint iteration.
pub(crate) struct JointBatch {
    pub mse: f64,
    pub rqr: f64,
    pub theta_mse: Vec<Array2<f64>>,
    pub theta_rqr: Vec<Array2<f64>>,
    #[cfg(test)]
    pub margins_mse: Vec<Array2<f64>>,
    pub margins_rqr: Vec<Array2<f64>>,
}

pub(crate) fn joint_batch(spec: &ModelSpec, theta: &CrispParams, m: &UncertaintyParams, mb: &MiniBatch, lambda: f64) -> Result<JointBatch> {
    let mut tape = Tape::new();
    let th = theta_vars(&mut tape, theta, true);
    let (lo, hi) = margin_vars(&mut tape, m);
    let iv = interval_vars(&mut tape, spec.trick, &th, &lo, &hi);
    let ro = rollout(&mut tape, spec, &th, Some(&iv), &mb.u, &mb.y1, None)?;
    let (blo, bhi) = ro.bounds.expect("interval rollout");
    let target = tape.constant(mb.target.clone());
    let l1 = mse_node(&mut tape, ro.y, target);
    let l2 = rqr_w_node(&mut tape, target, blo, bhi, spec.alpha, lambda);
    let g1 = tape.backward(l1)?;
    let g2 = tape.backward(l2)?;
    let margins: Vec<Var> = lo.iter().chain(&hi).copied().collect();
    let owned = |g: &Gradients, vs: &[Var]| vs.iter().map(|&v| g.param(v).clone()).collect::<Vec<_>>();
    Ok(JointBatch {
        mse: tape.scalar(l1),
        rqr: tape.scalar(l2),
        theta_mse: owned(&g1, &th),
        theta_rqr: owned(&g2, &th),
        #[cfg(test)]
        margins_mse: owned(&g1, &margins),
        margins_rqr: owned(&g2, &margins),
    })
}

fn split_margins(flat: Vec<Array2<f64>>) -> UncertaintyParams {
    let n = flat.len() / 2;
    let mut lower = flat;
    let upper = lower.split_off(n);
    UncertaintyParams { lower, upper }
}

fn crisp_stage(spec: &ModelSpec, data: &WindowedBatch, opts: &TrainOptions, theta0: CrispParams, record: &mut TrainRecord) -> Result<CrispParams> {
    let mut theta = theta0;
    let mut opt = Adam::new(opts.adam, &theta.tensors);
    let mut batcher = Batcher::new(opts.seed, "shuffle", data.len(), opts.batch_size)?;
    let mut best = Best::initial(Stage::Crisp, &theta);
    for epoch in 1..=opts.epochs {
        let t0 = Instant::now();
        let mut total = 0.0;
        let batches = batcher.epoch();
        for (bi, rows) in batches.iter().enumerate() {
            let (loss, grads) = crisp_batch(spec, &theta, &data.select(rows))?;
            total += finite("mse", epoch, bi + 1, loss)?;
            let refs: Vec<_> = grads.iter().collect();
            finite_grads("mse gradient", epoch, bi + 1, &refs)?;
            opt.step(&mut theta.tensors, &refs)?;
        }
        let mean = total / batches.len() as f64;
        best.offer(epoch, mean, &theta);
        let mut e = EpochRecord::new(Stage::Crisp, epoch);
        e.mse = Some(mean);
        e.seconds = t0.elapsed().as_secs_f64();
        record.epochs.push(e);
    }
    let (theta, snap) = best.into_parts();
    record.best_theta = snap;
    Ok(theta)
}

fn margin_stage(
    spec: &ModelSpec,
    data: &WindowedBatch,
    opts: &TrainOptions,
    theta: &CrispParams,
    m0: UncertaintyParams,
    record: &mut TrainRecord,
) -> Result<UncertaintyParams> {
    let mut flat: Vec<Array2<f64>> = m0.lower.into_iter().chain(m0.upper).collect();
    let mut opt = Adam::new(opts.adam, &flat);
    let mut batcher = Batcher::new(opts.seed, "shuffle/margins", data.len(), opts.batch_size)?;
    let mut best = Best::initial(Stage::Margins, &flat);
    for epoch in 1..=opts.epochs {
        let t0 = Instant::now();
        let mut total = 0.0;
        let batches = batcher.epoch();
        for (bi, rows) in batches.iter().enumerate() {
            let m = split_margins(flat.clone());
            let (loss, grads) = margin_batch(spec, theta, &m, &data.select(rows), opts.lambda)?;
            total += finite("rqr_w", epoch, bi + 1, loss)?;
            let refs: Vec<_> = grads.iter().collect();
            finite_grads("rqr_w gradient", epoch, bi + 1, &refs)?;
            opt.step(&mut flat, &refs)?;
        }
        let mean = total / batches.len() as f64;
        best.offer(epoch, mean, &flat);
        let mut e = EpochRecord::new(Stage::Margins, epoch);
        e.rqr_w = Some(mean);
        e.seconds = t0.elapsed().as_secs_f64();
        record.epochs.push(e);
    }
    let (flat, snap) = best.into_parts();
    record.best_margins = snap;
    Ok(split_margins(flat))
}

fn check_inputs(spec: &ModelSpec, data: &WindowedBatch) -> Result<()> {
    spec.validate()?;
    if spec.outputs != 1 {
        return Err(Error::InvalidSpec("interval training needs a single-output model".into()));
    }
    if data.window < 2 {
        return Err(Error::arg("window", "training windows need at least 2 steps"));
    }
    Ok(())
}

/// Minimizes the MSE of the crisp network from its seeded initialization.
pub fn train_crisp(spec: &ModelSpec, data: &WindowedBatch, opts: &TrainOptions) -> Result<(CrispParams, TrainRecord)> {
    check_inputs(spec, data)?;
    let mut record = TrainRecord::default();
    let theta = crisp_stage(spec, data, opts, init_crisp(spec, opts.seed), &mut record)?;
    Ok((theta, record))
}

/// Two stages: crisp MSE training, then the margins alone under RQR-W.
pub fn train_cascade(spec: &ModelSpec, data: &WindowedBatch, opts: &TrainOptions) -> Result<IntervalModel> {
    let (theta, mut record) = train_crisp(spec, data, opts)?;
    let m0 = init_uncertainty(spec, &theta, opts.r_h, opts.r_o)?;
    let margins = margin_stage(spec, data, opts, &theta, m0, &mut record)?;
    Ok(IntervalModel { theta, margins, record })
}

/// One stage: `theta` follows the scaled Pareto loss, the margins follow
/// RQR-W and the scales follow the gradient-balancing loss.
pub fn train_joint(spec: &ModelSpec, data: &WindowedBatch, opts: &TrainOptions, jopts: &JointOptions) -> Result<IntervalModel> {
    check_inputs(spec, data)?;
    let mut theta = init_crisp(spec, opts.seed);
    let m0 = init_uncertainty(spec, &theta, opts.r_h, opts.r_o)?;
    let mut flat: Vec<Array2<f64>> = m0.lower.into_iter().chain(m0.upper).collect();
    let mut scales = jopts.initial_scales;
    let mut s_param = vec![Array2::from_shape_vec((1, 2), scales.as_array().to_vec()).expect("1x2")];

    let mut opt_theta = Adam::new(opts.adam, &theta.tensors);
    let mut opt_m = Adam::new(opts.adam, &flat);
    let mut opt_s = Adam::new(AdamConfig { lr: opts.lr_scales, ..opts.adam }, &s_param);
    let mut batcher = Batcher::new(opts.seed, "shuffle", data.len(), opts.batch_size)?;
    let shared = spec.shared_indices();

    let mut record = TrainRecord::default();
    let mut best_theta = Best::initial(Stage::Joint, &theta);
    let mut best_m = Best::initial(Stage::Joint, &flat);
    let mut initial: Option<[f64; 2]> = None;

    for epoch in 1..=opts.epochs {
        let t0 = Instant::now();
        let (mut t_mse, mut t_rqr, mut t_par, mut t_grad) = (0.0, 0.0, 0.0, 0.0);
        let batches = batcher.epoch();
        for (bi, rows) in batches.iter().enumerate() {
            let b = bi + 1;
            let jb = joint_batch(spec, &theta, &split_margins(flat.clone()), &data.select(rows), opts.lambda)?;
            let l1 = finite("mse", epoch, b, jb.mse)?;
            let l2 = finite("rqr_w", epoch, b, jb.rqr)?;
            let g1: Vec<_> = jb.theta_mse.iter().collect();
            let g2: Vec<_> = jb.theta_rqr.iter().collect();
            finite_grads("mse gradient", epoch, b, &g1)?;
            finite_grads("rqr_w gradient", epoch, b, &g2)?;
            let init = *initial.get_or_insert([l1, l2]);
            t_mse += l1;
            t_rqr += l2;
            t_par += scales.s1 * l1 + scales.s2 * l2;

            let dtheta = combine(&g1, scales.s1, &g2, scales.s2);
            opt_theta.step(&mut theta.tensors, &dtheta.iter().collect::<Vec<_>>())?;
            if jopts.update_margins {
                let gm: Vec<_> = jb.margins_rqr.iter().collect();
                finite_grads("margin gradient", epoch, b, &gm)?;
                opt_m.step(&mut flat, &gm)?;
            }
            if !jopts.freeze_scales {
                let pick = |g: &[&Array2<f64>]| norm(&shared.iter().map(|&i| g[i]).collect::<Vec<_>>());
                let step = gradnorm_update([l1, l2], init, scales, [pick(&g1), pick(&g2)], opts.beta)?;
                t_grad += finite("gradnorm", epoch, b, step.l_grad)?;
                let gs = Array2::from_shape_vec((1, 2), step.grad_s.to_vec()).expect("1x2");
                opt_s.step(&mut s_param, &[&gs])?;
                scales = ScalePair::renormalized(s_param[0][[0, 0]], s_param[0][[0, 1]]);
                s_param[0][[0, 0]] = scales.s1;
                s_param[0][[0, 1]] = scales.s2;
            }
            record.scale_history.push(scales.as_array());
        }
        let n = batches.len() as f64;
        let mut e = EpochRecord::new(Stage::Joint, epoch);
        e.mse = Some(t_mse / n);
        e.rqr_w = Some(t_rqr / n);
        e.pareto = Some(t_par / n);
        e.grad = (!jopts.freeze_scales).then_some(t_grad / n);
        e.scales = Some(scales.as_array());
        e.seconds = t0.elapsed().as_secs_f64();
        best_theta.offer(epoch, t_par / n, &theta);
        best_m.offer(epoch, t_rqr / n, &flat);
        record.epochs.push(e);
    }
    let (theta, snap_t) = best_theta.into_parts();
    let (flat, snap_m) = best_m.into_parts();
    record.best_theta = snap_t;
    record.best_margins = snap_m;
    Ok(IntervalModel { theta, margins: split_margins(flat), record })
}
