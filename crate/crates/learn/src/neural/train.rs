//! Mini-batch SGD with momentum, shared by all networks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A model whose parameters live in one flat vector.
pub trait Trainable: Sync {
    type Sample: Sync;

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Loss of one sample; adds its gradient to `grad`.
    fn sample_loss_grad(&self, sample: &Self::Sample, grad: &mut [f64]) -> f64;

    fn sample_loss(&self, sample: &Self::Sample) -> f64;
}

/// Fixed number of gradient partitions, so the summation order (and thus
/// the result) does not depend on the thread count.
const PARTITIONS: usize = 4;

/// Mean loss and mean gradient over `samples`.
pub fn batch_loss_grad<M: Trainable>(model: &M, samples: &[&M::Sample]) -> (f64, Vec<f64>) {
    let n = model.params().len();
    let chunk = samples.len().div_ceil(PARTITIONS).max(1);
    let parts: Vec<(f64, Vec<f64>)> = samples
        .par_chunks(chunk)
        .map(|part| {
            let mut g = vec![0.0; n];
            let loss: f64 = part.iter().map(|s| model.sample_loss_grad(s, &mut g)).sum();
            (loss, g)
        })
        .collect();
    let mut grad = vec![0.0; n];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let scale = 1.0 / samples.len().max(1) as f64;
    grad.iter_mut().for_each(|v| *v *= scale);
    (loss * scale, grad)
}

/// Mean loss over `samples`.
pub fn mean_loss<M: Trainable>(model: &M, samples: &[M::Sample]) -> f64 {
    let chunk = samples.len().div_ceil(PARTITIONS).max(1);
    let parts: Vec<f64> = samples.par_chunks(chunk).map(|p| p.iter().map(|s| model.sample_loss(s)).sum()).collect();
    parts.iter().sum::<f64>() / samples.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Training stops once repeated back-offs push the rate below this.
    pub min_learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            patience: 15,
            min_learning_rate: 1e-7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full training loss after each accepted epoch, starting with the
    /// initial parameters. Non-increasing by construction.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Index into `val_loss` of the parameters kept.
    pub best_epoch: Option<usize>,
    pub final_learning_rate: f64,
}

/// Trains `model` in place. An epoch that raises the full training loss
/// (or makes it non-finite) is undone and the learning rate halved. With a
/// validation set, training stops after `patience` epochs without
/// improvement and the best validation parameters are restored.
pub fn train<M: Trainable>(model: &mut M, train: &[M::Sample], val: &[M::Sample], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut lr = config.learning_rate;
    let mut report = TrainReport::default();
    let mut current = mean_loss(model, train);
    if !current.is_finite() {
        return Err(Error::TrainingFailed {
            reason: "initial loss is not finite".into(),
            trace: vec![current],
        });
    }
    report.train_loss.push(current);
    let n = model.params().len();
    let mut velocity = vec![0.0; n];
    let mut best_val = f64::INFINITY;
    let mut best_params: Option<Vec<f64>> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rejected_nan = false;
    for _ in 0..config.epochs {
        let saved = model.params().to_vec();
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let samples: Vec<&M::Sample> = batch.iter().map(|&i| &train[i]).collect();
            let (_, grad) = batch_loss_grad(model, &samples);
            for ((p, v), g) in model.params_mut().iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = config.momentum * *v - lr * g;
                *p += *v;
            }
        }
        let loss = mean_loss(model, train);
        if !(loss <= current) {
            rejected_nan = !loss.is_finite();
            model.params_mut().copy_from_slice(&saved);
            velocity.iter_mut().for_each(|v| *v = 0.0);
            lr *= 0.5;
            if lr < config.min_learning_rate {
                break;
            }
            continue;
        }
        rejected_nan = false;
        current = loss;
        report.train_loss.push(loss);
        if !val.is_empty() {
            let vl = mean_loss(model, val);
            report.val_loss.push(vl);
            if vl < best_val {
                best_val = vl;
                best_params = Some(model.params().to_vec());
                report.best_epoch = Some(report.val_loss.len() - 1);
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
    }
    if rejected_nan && report.train_loss.len() == 1 {
        return Err(Error::TrainingFailed {
            reason: "every epoch diverged".into(),
            trace: report.train_loss,
        });
    }
    if let Some(p) = best_params {
        model.params_mut().copy_from_slice(&p);
    }
    report.final_learning_rate = lr;
    Ok(report)
}

/// Largest relative difference between the analytic gradient of the mean
/// loss over `samples` and central finite differences with step `h`. Each
/// difference is divided by `max(|analytic|, |numeric|, floor)`.
pub fn gradient_check<M: Trainable>(model: &mut M, samples: &[M::Sample], h: f64, floor: f64) -> f64 {
    let refs: Vec<&M::Sample> = samples.iter().collect();
    let (_, grad) = batch_loss_grad(model, &refs);
    let mut worst: f64 = 0.0;
    for (i, &a) in grad.iter().enumerate() {
        let x = model.params()[i];
        model.params_mut()[i] = x + h;
        let up = mean_loss(model, samples);
        model.params_mut()[i] = x - h;
        let down = mean_loss(model, samples);
        model.params_mut()[i] = x;
        let n = (up - down) / (2.0 * h);
        worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(floor));
    }
    worst
}
