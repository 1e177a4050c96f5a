//! AdamW with decoupled weight decay, parameter EMA, slanted triangular
//! learning-rate schedule, batching, the training loop and checkpoints.

mod checkpoint;
mod run;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::EvalError;
use crate::model::ModelError;
use crate::ndiff::Tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use run::{
    prepare_corpus, resume, score_corpus, to_scored, train, train_until, EpochLog, TrainData,
    TrainOutcome,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite loss at step {step} in batch [{}]", docs.join(", "))]
    NonFinite { step: u64, docs: Vec<String> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_frac: f64,
    pub ema_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Threads computing per-document gradients within a batch.
    pub workers: usize,
    /// Evaluate on dev every this many epochs; the last epoch is always
    /// evaluated.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-3,
            batch_size: 16,
            epochs: 300,
            warmup_frac: 0.1,
            ema_decay: 0.9999,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-6,
            weight_decay: 1e-4,
            seed: 0,
            workers: 1,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return bad("warmup_frac must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.ema_decay >= 0.0 && self.ema_decay < 1.0) {
            return bad("ema_decay must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        let negative = |x: f64| x.is_nan() || x < 0.0;
        if negative(self.adam_eps)
            || self.adam_eps == 0.0
            || negative(self.weight_decay)
            || negative(self.peak_lr)
        {
            return bad("adam_eps must be positive; weight_decay and peak_lr non-negative");
        }
        if self.workers == 0 || self.eval_every == 0 {
            return bad("workers and eval_every must be at least 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        TrainConfig::default().adam()
    }
}

/// Number of warmup steps: `round(warmup_frac · total)`, at least 1.
pub fn warmup_steps(total_steps: u64, warmup_frac: f64) -> u64 {
    ((warmup_frac * total_steps as f64).round() as u64).max(1)
}

/// Slanted triangular schedule: linear `0 → peak` over `[0, warmup]`,
/// linear `peak → 0` over `[warmup, total]`.
pub fn lr_at(step: u64, total_steps: u64, warmup_frac: f64, peak: f64) -> f64 {
    let warmup = warmup_steps(total_steps, warmup_frac);
    if step >= total_steps {
        0.0
    } else if step <= warmup {
        peak * (step as f64 / warmup as f64)
    } else {
        peak * ((total_steps - step) as f64 / (total_steps - warmup) as f64)
    }
}

/// First and second moments plus the number of completed steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

fn check_shapes(what: &str, a: &[Tensor], b: &[Tensor]) -> Result<(), TrainError> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.shape() != y.shape()) {
        return Err(TrainError::Config(format!(
            "{what} shapes do not match the parameters"
        )));
    }
    Ok(())
}

/// One AdamW update: `θ ← θ − lr·(m̂/(√v̂ + ε) + wd·θ)`.
pub fn adamw_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut OptimState,
    lr: f64,
    hp: &AdamHyper,
) -> Result<(), TrainError> {
    check_shapes("gradient", params, grads)?;
    check_shapes("moment", params, &state.m)?;
    state.step += 1;
    let bc1 = 1.0 - hp.beta1.powi(state.step as i32);
    let bc2 = 1.0 - hp.beta2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((x, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = hp.beta1 * *mi + (1.0 - hp.beta1) * gi;
            *vi = hp.beta2 * *vi + (1.0 - hp.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *x -= lr * (m_hat / (v_hat.sqrt() + hp.eps) + hp.weight_decay * *x);
        }
    }
    Ok(())
}

/// Exponential moving average of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub shadow: Vec<Tensor>,
    pub decay: f64,
}

impl EmaState {
    /// Shadow initialized to a copy of `params`.
    pub fn new(params: &[Tensor], decay: f64) -> Self {
        Self {
            shadow: params.to_vec(),
            decay,
        }
    }
}

/// `shadow ← decay·shadow + (1 − decay)·param`.
pub fn ema_update(ema: &mut EmaState, params: &[Tensor]) -> Result<(), TrainError> {
    check_shapes("shadow", params, &ema.shadow)?;
    let d = ema.decay;
    for (s, p) in ema.shadow.iter_mut().zip(params) {
        for (si, &pi) in s.data_mut().iter_mut().zip(p.data()) {
            *si = d * *si + (1.0 - d) * pi;
        }
    }
    Ok(())
}

/// Seeded shuffle of `0..n_docs` cut into batches; the last batch may be
/// short.
pub fn make_batches(n_docs: usize, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..n_docs).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
