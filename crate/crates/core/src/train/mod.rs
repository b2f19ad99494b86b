//! Dataset generation, end-to-end training and evaluation.

mod dataset;
mod eval;

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{stream_rng, Stream};
use crate::diffengine::{clip_grad_norm, Adam, Graph, Var};
use crate::error::{Error, Result};
use crate::linops::ComplexMatrix;
use crate::urformer::{bind, build_forward, prefit_filternet, ForwardOptions, Pilots, URformerConfig, URformerParams};

pub use dataset::{build_dataset, Dataset, Sample, DATASET_KIND};
pub use eval::{evaluate, run_trial, trial_seed, EvalPoint, EvalSettings, Method, ModelRef, TrialOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub num_samples: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Initial learning rate; decays along a cosine to `final_learning_rate`.
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    pub snr_range_db: (f64, f64),
    pub rsr_db: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    pub grad_clip_norm: f64,
    /// Adam steps for the FilterNet warm start; 0 keeps the random init.
    pub prefit_filter_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_samples: 20000,
            batch_size: 64,
            epochs: 50,
            learning_rate: 1e-3,
            final_learning_rate: 1e-5,
            snr_range_db: (-5.0, 15.0),
            rsr_db: 10.0,
            seed: 0,
            validation_fraction: 0.1,
            grad_clip_norm: 1.0,
            prefit_filter_steps: 3000,
        }
    }
}

impl TrainConfig {
    pub fn num_validation(&self, n: usize) -> usize {
        ((n as f64 * self.validation_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_samples < 2 {
            return bad("num_samples must be at least 2".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation_fraction {} outside (0, 1)", self.validation_fraction));
        }
        if self.batch_size == 0 || self.batch_size > self.num_samples - self.num_validation(self.num_samples) {
            return bad(format!("batch_size {} exceeds the training split", self.batch_size));
        }
        if !(self.learning_rate > 0.0 && self.final_learning_rate > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive".into());
        }
        let (lo, hi) = self.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("snr_range_db [{lo}, {hi}] is empty"));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        let frac = if total > 1 { step as f64 / (total - 1) as f64 } else { 0.0 };
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
        self.final_learning_rate + (self.learning_rate - self.final_learning_rate) * cos
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's batches, in dB.
    pub train_nmse_db: f64,
    pub val_nmse_db: f64,
    pub learning_rate: f64,
    pub wallclock_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LrHalving {
    pub epoch: usize,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub num_train: usize,
    pub num_validation: usize,
    pub initial_train_nmse_db: f64,
    pub initial_val_nmse_db: f64,
    pub epochs: Vec<EpochRecord>,
    /// 0 when the initialization was never beaten.
    pub best_epoch: usize,
    pub best_val_nmse_db: f64,
    /// Training-split NMSE of the returned parameters.
    pub final_train_nmse_db: f64,
    pub lr_halved: Option<LrHalving>,
    pub wallclock_ms: u64,
    pub checkpoint_path: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation parameters.
    pub params: URformerParams,
    /// Parameters after the final update.
    pub last: URformerParams,
    pub report: TrainReport,
}

fn to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// `‖Ĥ - H‖² / ‖H‖²` as a graph node.
pub fn nmse_loss(g: &mut Graph, h_hat: (Var, Var), h: &ComplexMatrix) -> Result<Var> {
    let reference = h.frobenius_norm_sq();
    if !(reference > 0.0) {
        return Err(Error::ZeroReference);
    }
    let (m, k) = h.shape();
    let tr = g.constant(m, k, h.re().to_vec())?;
    let ti = g.constant(m, k, h.im().to_vec())?;
    let dr = g.sub(h_hat.0, tr)?;
    let di = g.sub(h_hat.1, ti)?;
    let sr = g.square(dr);
    let si = g.square(di);
    let s = g.add(sr, si)?;
    let total = g.sum(s);
    Ok(g.scale(total, 1.0 / reference))
}

/// Loss and parameter gradients for one sample.
pub fn sample_gradient(params: &URformerParams, pilots: &Pilots, sample: &Sample) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let vars = bind(&mut g, params, true)?;
    let out = build_forward(&mut g, params, &vars, pilots, &sample.meas, &ForwardOptions::default())?;
    let loss = nmse_loss(&mut g, out.h, &sample.h)?;
    let grads = g.backward(loss)?;
    let gv = vars.iter().zip(&params.values).map(|(&v, p)| grads.get_or_zeros(v, p.len())).collect();
    Ok((g.scalar(loss), gv))
}

/// Linear NMSE of one sample under `params`.
pub fn sample_loss(params: &URformerParams, pilots: &Pilots, sample: &Sample) -> Result<f64> {
    let mut g = Graph::new();
    let vars = bind(&mut g, params, false)?;
    let out = build_forward(&mut g, params, &vars, pilots, &sample.meas, &ForwardOptions::default())?;
    let loss = nmse_loss(&mut g, out.h, &sample.h)?;
    Ok(g.scalar(loss))
}

/// Mean linear NMSE over `indices` (parallel, ordered reduction).
pub fn mean_loss(params: &URformerParams, pilots: &Pilots, data: &Dataset, indices: &[usize]) -> Result<f64> {
    let losses = indices
        .par_iter()
        .map(|&i| sample_loss(params, pilots, &data.samples[i]))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Fresh parameters for `data`'s dimensions, with the FilterNet warm start.
pub fn initial_params(data: &Dataset, model: &URformerConfig, cfg: &TrainConfig) -> Result<URformerParams> {
    let sc = &data.scenario;
    let dims = crate::urformer::ModelDims {
        num_antennas: sc.num_antennas,
        num_users: sc.num_users,
        num_pilots: sc.num_pilots,
    };
    let mut params = URformerParams::init(model, dims, cfg.seed)?;
    if cfg.prefit_filter_steps > 0 {
        let fit = prefit_filternet(model.filternet_hidden, cfg.prefit_filter_steps, cfg.seed)?;
        log::info!("FilterNet warm start: max |R_fit - R| on [0, 100] = {:.4}", fit.max_abs_dev);
        params.set_filternets(&fit.weights)?;
    }
    Ok(params)
}

/// Deterministic train/validation split.
pub fn split_indices(n: usize, cfg: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, 0));
    let n_val = cfg.num_validation(n);
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

pub fn train(data: &Dataset, model: &URformerConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let init = initial_params(data, model, cfg)?;
    train_from(data, init, cfg)
}

struct Snapshot {
    params: URformerParams,
    adam: Adam,
    batch: Vec<usize>,
    lr: f64,
}

fn batch_gradient(
    params: &URformerParams,
    pilots: &Pilots,
    data: &Dataset,
    batch: &[usize],
) -> Result<Option<(f64, Vec<Vec<f64>>)>> {
    let per = batch
        .par_iter()
        .map(|&i| sample_gradient(params, pilots, &data.samples[i]))
        .collect::<Result<Vec<_>>>()?;
    let n = per.len() as f64;
    let mut total = 0.0;
    let mut acc: Vec<Vec<f64>> = params.values.iter().map(|v| vec![0.0; v.len()]).collect();
    for (loss, grads) in &per {
        total += loss;
        for (a, g) in acc.iter_mut().zip(grads) {
            a.iter_mut().zip(g).for_each(|(x, y)| *x += y / n);
        }
    }
    let loss = total / n;
    let finite = loss.is_finite() && acc.iter().flatten().all(|v| v.is_finite());
    Ok(finite.then_some((loss, acc)))
}

/// Trains starting from `init`, returning the best-validation parameters.
pub fn train_from(data: &Dataset, init: URformerParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(Error::InvalidConfig("dataset needs at least 2 samples".into()));
    }
    let start = Instant::now();
    let pilots = Pilots::new(&data.pilots)?;
    let (train_idx, val_idx) = split_indices(data.len(), cfg);
    if cfg.batch_size > train_idx.len() {
        return Err(Error::InvalidConfig(format!(
            "batch_size {} exceeds the {} training samples",
            cfg.batch_size,
            train_idx.len()
        )));
    }
    let initial_train = mean_loss(&init, &pilots, data, &train_idx)?;
    let initial_val = mean_loss(&init, &pilots, data, &val_idx)?;
    log::info!("init: train {:.3} dB, val {:.3} dB", to_db(initial_train), to_db(initial_val));

    let mut params = init.clone();
    let mut adam = Adam::new(&params.sizes());
    let (mut best, mut best_val, mut best_epoch) = (init, initial_val, 0);
    let batches_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut lr_scale = 1.0;
    let mut lr_halved = None;
    let mut prev: Option<Snapshot> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    let mut lr = cfg.lr_at(0, total_steps);
    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, epoch as u64));
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, mut grads) = match batch_gradient(&params, &pilots, data, batch)? {
                Some(v) => v,
                None => {
                    let snap = match (lr_halved, prev.take()) {
                        (None, Some(s)) => s,
                        _ => return Err(Error::NonFiniteLoss { epoch, batch: b }),
                    };
                    log::warn!("non-finite loss at epoch {epoch}, batch {b}; halving the learning rate and retrying");
                    lr_halved = Some(LrHalving { epoch, batch: b });
                    lr_scale = 0.5;
                    params = snap.params;
                    adam = snap.adam;
                    let (_, mut g) = batch_gradient(&params, &pilots, data, &snap.batch)?
                        .ok_or(Error::NonFiniteLoss { epoch, batch: b })?;
                    clip_grad_norm(&mut g, cfg.grad_clip_norm);
                    adam.step(&mut params.values, &g, snap.lr * lr_scale);
                    batch_gradient(&params, &pilots, data, batch)?.ok_or(Error::NonFiniteLoss { epoch, batch: b })?
                }
            };
            epoch_loss += loss;
            lr = cfg.lr_at(step, total_steps);
            if lr_halved.is_none() {
                prev = Some(Snapshot { params: params.clone(), adam: adam.clone(), batch: batch.to_vec(), lr });
            }
            clip_grad_norm(&mut grads, cfg.grad_clip_norm);
            adam.step(&mut params.values, &grads, lr * lr_scale);
            step += 1;
        }
        let val = mean_loss(&params, &pilots, data, &val_idx)?;
        let record = EpochRecord {
            epoch,
            train_nmse_db: to_db(epoch_loss / batches_per_epoch as f64),
            val_nmse_db: to_db(val),
            learning_rate: lr * lr_scale,
            wallclock_ms: start.elapsed().as_millis() as u64,
        };
        log::info!("epoch {epoch}: train {:.3} dB, val {:.3} dB", record.train_nmse_db, record.val_nmse_db);
        epochs.push(record);
        if val < best_val {
            best_val = val;
            best = params.clone();
            best_epoch = epoch;
        }
    }
    let final_train = if best_epoch == 0 { initial_train } else { mean_loss(&best, &pilots, data, &train_idx)? };
    let report = TrainReport {
        seed: cfg.seed,
        num_train: train_idx.len(),
        num_validation: val_idx.len(),
        initial_train_nmse_db: to_db(initial_train),
        initial_val_nmse_db: to_db(initial_val),
        epochs,
        best_epoch,
        best_val_nmse_db: to_db(best_val),
        final_train_nmse_db: to_db(final_train),
        lr_halved,
        wallclock_ms: start.elapsed().as_millis() as u64,
        checkpoint_path: None,
    };
    Ok(TrainOutcome { params: best, last: params, report })
}
