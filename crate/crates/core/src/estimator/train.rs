//! Training loop and evaluation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossValues;
use super::model::{pinn_forward, BatchInputs, PinnModel, Prediction};
use super::{EstimatorError, KnownParams, ObservationWindow};
use crate::diffnet::{adam_step, AdamConfig, Graph};

/// A window with its known parameters and measured force.
pub trait TrainingExample {
    fn window(&self) -> &ObservationWindow;
    fn known(&self) -> &KnownParams;
    /// Measured force on the soil, N.
    fn force(&self) -> [f64; 2];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossValues,
    /// Mean ‖F − F̂‖ over the eval split, N.
    pub eval_mae: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_eval_mae: f64,
    /// Weights from the epoch with the lowest eval error.
    pub best: PinnModel,
}

fn batch_of<T: TrainingExample>(model: &PinnModel, items: &[&T]) -> Result<(BatchInputs, Vec<[f64; 2]>), EstimatorError> {
    let windows: Vec<&ObservationWindow> = items.iter().map(|s| s.window()).collect();
    let known: Vec<KnownParams> = items.iter().map(|s| *s.known()).collect();
    let target = items.iter().map(|s| s.force()).collect();
    Ok((BatchInputs::new(&windows, &known, &model.normalizer, model.config.window_len)?, target))
}

/// Predictions for every example, in chunks of the configured batch size.
pub fn predict<T: TrainingExample>(model: &PinnModel, samples: &[T]) -> Result<Vec<Prediction>, EstimatorError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(model.config.batch_size.max(1)) {
        let windows: Vec<&ObservationWindow> = chunk.iter().map(|s| s.window()).collect();
        let known: Vec<KnownParams> = chunk.iter().map(|s| *s.known()).collect();
        out.extend(pinn_forward(model, &windows, &known)?);
    }
    Ok(out)
}

/// Mean Euclidean force error, N.
pub fn evaluate<T: TrainingExample>(model: &PinnModel, samples: &[T]) -> Result<f64, EstimatorError> {
    if samples.is_empty() {
        return Err(EstimatorError::EmptyBatch);
    }
    let pred = predict(model, samples)?;
    let sum: f64 = pred
        .iter()
        .zip(samples)
        .map(|(p, s)| {
            let f = s.force();
            (f[0] - p.f_hat[0]).hypot(f[1] - p.f_hat[1])
        })
        .sum();
    Ok(sum / samples.len() as f64)
}

/// Trains `model` with Adam on shuffled mini-batches.
///
/// Each epoch is scored on `eval`; the best-scoring weights are returned
/// and, if `checkpoint` is given, written there. With `log_csv` one row per
/// epoch is written.
pub fn train<T: TrainingExample>(
    mut model: PinnModel,
    train: &[T],
    eval: &[T],
    checkpoint: Option<&Path>,
    log_csv: Option<&Path>,
) -> Result<TrainReport, EstimatorError> {
    if train.is_empty() || eval.is_empty() {
        return Err(EstimatorError::EmptyBatch);
    }
    let cfg = model.config.clone();
    let adam = AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut writer = match log_csv {
        Some(p) => Some(csv::Writer::from_path(p)?),
        None => None,
    };
    if let Some(w) = writer.as_mut() {
        w.write_record(["epoch", "total", "force", "residual", "limits", "delta_d", "dngamma", "eval_mae"])?;
    }

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_mae = evaluate(&model, eval)?;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = LossValues::default();
        let mut batches = 0usize;
        for (bi, idx) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let items: Vec<&T> = idx.iter().map(|&i| &train[i]).collect();
            let (batch, target) = batch_of(&model, &items)?;
            let mut g = Graph::new();
            let parts = model.forward_loss(&mut g, &batch, Some(&target), &cfg.weights)?;
            let v = parts.values(&g);
            if !v.total.is_finite() {
                return Err(EstimatorError::NonFiniteLoss { epoch, batch: bi });
            }
            let grads = g.backward(parts.total)?.for_store(&model.store);
            if grads.iter().any(|t| !t.all_finite()) {
                return Err(EstimatorError::NonFiniteLoss { epoch, batch: bi });
            }
            adam_step(&mut model.store, &grads, &adam)?;
            acc.total += v.total;
            acc.force += v.force;
            acc.residual += v.residual;
            acc.limits += v.limits;
            acc.delta_d += v.delta_d;
            acc.dngamma += v.dngamma;
            batches += 1;
        }
        let n = batches as f64;
        let train_loss = LossValues {
            total: acc.total / n,
            force: acc.force / n,
            residual: acc.residual / n,
            limits: acc.limits / n,
            delta_d: acc.delta_d / n,
            dngamma: acc.dngamma / n,
        };
        let eval_mae = evaluate(&model, eval)?;
        if eval_mae < best_mae {
            best_mae = eval_mae;
            best_epoch = epoch;
            best = model.clone();
            if let Some(p) = checkpoint {
                best.save(p)?;
            }
        }
        let row = EpochLog { epoch, train: train_loss, eval_mae };
        if let Some(w) = writer.as_mut() {
            let t = row.train;
            w.write_record(
                [epoch as f64, t.total, t.force, t.residual, t.limits, t.delta_d, t.dngamma, eval_mae].map(|x| x.to_string()),
            )?;
            w.flush()?;
        }
        log.push(row);
    }
    if best_epoch == 0 {
        if let Some(p) = checkpoint {
            best.save(p)?;
        }
    }
    Ok(TrainReport { log, best_epoch, best_eval_mae: best_mae, best })
}
