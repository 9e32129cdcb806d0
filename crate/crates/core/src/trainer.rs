//! Angular-error statistics, batch gradients and the Adam training loop with
//! step decay, early stopping and best-checkpoint selection.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaze::GazeVector;
use crate::loss::{loss_and_grad, BatchErrors, LossConfig, LossError, LossKind};
use crate::vit::{ForwardTrace, GazeModel, ModelError, ModelInput, ModelView};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error("fine-tuning needs a model with prune_ratio > 0")]
    PruningDisabled,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// A preprocessed input with its gaze label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: ModelInput,
    pub gaze: GazeVector,
}

/// Angle in degrees between the 3D rays of two gaze vectors.
pub fn angular_error(pred: &GazeVector, truth: &GazeVector) -> f64 {
    let a = pred.unit_ray();
    let b = truth.unit_ray();
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    dot.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Summary of angular errors in degrees. Percentiles are nearest-rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub mean: f64,
    pub p90: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// Nearest-rank percentile of an ascending slice: element `ceil(p/100 * n)`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

impl ErrorDistribution {
    pub fn from_errors(errors: &[f64]) -> Result<Self, TrainError> {
        if errors.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        let mut s = errors.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let mean = (s.iter().sum::<f64>() / n as f64).clamp(s[0], s[n - 1]);
        Ok(Self {
            mean,
            p90: nearest_rank(&s, 90.0),
            p95: nearest_rank(&s, 95.0),
            min: s[0],
            max: s[n - 1],
            count: n,
        })
    }
}

pub fn prediction_errors(view: &ModelView<'_>, samples: &[Sample]) -> Result<Vec<f64>, TrainError> {
    samples
        .par_iter()
        .map(|s| Ok(angular_error(&view.predict(&s.input)?, &s.gaze)))
        .collect()
}

/// Error statistics of `view` over `samples`.
pub fn evaluate(view: &ModelView<'_>, samples: &[Sample]) -> Result<ErrorDistribution, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    ErrorDistribution::from_errors(&prediction_errors(view, samples)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub finetune_lr: f64,
    pub finetune_epochs: usize,
    pub loss: LossKind,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_decay: 0.2,
            decay_every: 10,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            finetune_lr: 5e-5,
            finetune_epochs: 50,
            loss: LossKind::Mse,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(pos(self.lr) && pos(self.finetune_lr) && pos(self.eps) && pos(self.lr_decay)) {
            return bad("lr, finetune_lr, eps and lr_decay must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.decay_every == 0 || self.finetune_epochs == 0 {
            return bad("batch_size, max_epochs, patience, decay_every and finetune_epochs must be >= 1");
        }
        if self.patience > self.max_epochs {
            return bad("patience must not exceed max_epochs");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        Ok(())
    }

    /// Step-decayed learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }

    /// The same loop with the fine-tuning learning rate and epoch cap.
    pub fn finetune(&self) -> Self {
        Self {
            lr: self.finetune_lr,
            max_epochs: self.max_epochs.min(self.finetune_epochs),
            patience: self.patience.min(self.max_epochs.min(self.finetune_epochs)),
            ..self.clone()
        }
    }

    /// Validation P95 for latency-shaped objectives, mean error for MSE.
    pub fn selects_on_p95(&self) -> bool {
        self.loss != LossKind::Mse
    }
}

/// Deterministic `(train, validation)` index split.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(usize::from(n > 1), n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Exits that the loss kind reads.
pub fn loss_exits(model: &GazeModel, kind: LossKind) -> Vec<usize> {
    match kind {
        LossKind::Multires => model.config().exit_blocks.clone(),
        _ => vec![model.config().depth],
    }
}

fn squared_errors(traces: &[(ForwardTrace, GazeVector)], exits: &[usize]) -> Result<BTreeMap<usize, BatchErrors>, TrainError> {
    exits
        .iter()
        .map(|&e| {
            let xs = traces.iter().map(|(t, g)| t.prediction[&e].squared_distance(g)).collect();
            Ok((e, BatchErrors::new(xs)?))
        })
        .collect()
}

fn forward_batch(model: &GazeModel, batch: &[&Sample]) -> Result<Vec<(ForwardTrace, GazeVector)>, TrainError> {
    batch
        .par_iter()
        .map(|s| Ok((model.forward_train(&s.input)?, s.gaze)))
        .collect()
}

/// Loss of one batch without gradients.
pub fn batch_loss(model: &GazeModel, batch: &[&Sample], kind: LossKind, loss_cfg: &LossConfig) -> Result<f64, TrainError> {
    let traces = forward_batch(model, batch)?;
    let exits = loss_exits(model, kind);
    let per_exit = squared_errors(&traces, &exits)?;
    Ok(loss_and_grad(kind, &per_exit, model.config().depth, loss_cfg)?.0)
}

/// Samples per backward work unit. Partial gradients are summed in chunk
/// order, so results do not depend on the thread count.
const GRAD_CHUNK: usize = 8;

/// Batch loss and its gradient with respect to every parameter, laid out as
/// [`GazeModel::flat_params`].
pub fn batch_loss_and_grad(
    model: &GazeModel,
    batch: &[&Sample],
    kind: LossKind,
    loss_cfg: &LossConfig,
) -> Result<(f64, Vec<f64>), TrainError> {
    let traces = forward_batch(model, batch)?;
    let exits = loss_exits(model, kind);
    let per_exit = squared_errors(&traces, &exits)?;
    let (loss, dx) = loss_and_grad(kind, &per_exit, model.config().depth, loss_cfg)?;
    let partials: Vec<Vec<f64>> = traces
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut grads = model.zeros_like();
            for (k, (trace, truth)) in chunk.iter().enumerate() {
                let i = c * GRAD_CHUNK + k;
                let exit_grads = dx
                    .iter()
                    .map(|(&e, g)| {
                        let p = trace.prediction[&e];
                        (e, [g[i] * 2.0 * (p.pitch - truth.pitch), g[i] * 2.0 * (p.yaw - truth.yaw)])
                    })
                    .collect();
                model.backward(trace, &exit_grads, &mut grads)?;
            }
            Ok(grads.flat_params())
        })
        .collect::<Result<_, ModelError>>()?;
    let mut total = vec![0.0; model.param_count()];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    Ok((loss, total))
}

/// One row of the per-epoch log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mean_deg: f64,
    pub val_p95_deg: f64,
    pub lr: f64,
}

pub fn write_epoch_log<W: Write>(rows: &[EpochLog], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: GazeModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub stopped_early: bool,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.eps);
        }
    }
}

fn diverged(epoch: usize) -> impl Fn(TrainError) -> TrainError {
    move |e| match e {
        TrainError::Model(ModelError::NonFiniteActivation { .. } | ModelError::NonFiniteGradient(_)) => {
            TrainError::Diverged {
                epoch,
                reason: e.to_string(),
            }
        }
        other => other,
    }
}

/// Trains on `train`, selecting the epoch with the best validation metric.
pub fn train(
    model: &GazeModel,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut model = model.clone();
    let mut params = model.flat_params();
    let mut adam = Adam::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, GazeModel)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, grad) = batch_loss_and_grad(&model, &batch, cfg.loss, loss_cfg).map_err(diverged(epoch))?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    reason: format!("loss {loss}"),
                });
            }
            adam.step(&mut params, &grad, lr, cfg);
            model.set_flat_params(&params);
            loss_sum += loss;
            batches += 1;
        }
        let dist = evaluate(&model.view(), val).map_err(diverged(epoch))?;
        let metric = if cfg.selects_on_p95() { dist.p95 } else { dist.mean };
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_mean_deg: dist.mean,
            val_p95_deg: dist.p95,
            lr,
        });
        log::debug!(
            "epoch {epoch}: loss {:.6} val mean {:.3} p95 {:.3}",
            loss_sum / batches as f64,
            dist.mean,
            dist.p95
        );
        if best.as_ref().is_none_or(|(m, _, _)| metric < *m) {
            best = Some((metric, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch + 1 < cfg.max_epochs;
                break;
            }
        }
    }
    let (best_metric, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_metric,
        stopped_early,
    })
}

/// Continues training a pruned model with the fine-tuning overrides.
pub fn finetune_pruned(
    model: &GazeModel,
    train_set: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<TrainOutcome, TrainError> {
    if model.config().prune_ratio <= 0.0 {
        return Err(TrainError::PruningDisabled);
    }
    train(model, train_set, val, &cfg.finetune(), loss_cfg)
}
