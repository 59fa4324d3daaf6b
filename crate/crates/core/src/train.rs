//! Minibatch training with validation-based model selection.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::config::TrainConfig;
use crate::coupled::ClassWeights;
use crate::data::PatientJourney;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::model::{forward, journey_loss, ForwardOptions, Model, ModelParams};
use crate::optim::Adam;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean weighted cross-entropy over the training set.
    pub train_loss: f64,
    /// NaN when no validation set is given.
    pub valid_loss: f64,
    /// NaN when the validation set lacks a class.
    pub valid_auroc: f64,
    pub valid_auprc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,valid_loss,valid_auroc,valid_auprc\n");
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.epoch, r.train_loss, r.valid_loss, r.valid_auroc, r.valid_auprc
            );
        }
        out
    }
}

/// Loss and gradient of one journey, gradients scaled by `scale`.
pub fn journey_gradient(
    model: &Model,
    journey: &PatientJourney,
    weights: &ClassWeights,
    scale: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let params = model.params.bind(&mut tape, true);
    let out = forward(&mut tape, &model.config, &params, journey, ForwardOptions::default())?;
    let loss = journey_loss(&mut tape, &out, journey.label, weights)?;
    let value = tape.value(loss).item()?;
    let scaled = tape.scale(loss, scale);
    tape.backward(scaled)?;
    let mut vars: Vec<Var> = Vec::new();
    params.map(&mut |_, v| vars.push(*v));
    let grads = vars
        .into_iter()
        .map(|v| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(v).shape())))
        .collect();
    Ok((value, grads))
}

/// Weighted cross-entropy of one journey without gradients.
pub fn journey_loss_value(model: &Model, journey: &PatientJourney, weights: &ClassWeights) -> Result<f64> {
    let mut tape = Tape::new();
    let params = model.params.bind(&mut tape, false);
    let out = forward(&mut tape, &model.config, &params, journey, ForwardOptions::default())?;
    let loss = journey_loss(&mut tape, &out, journey.label, weights)?;
    Ok(tape.value(loss).item()?)
}

fn norms_report(params: &ModelParams<Tensor>) -> String {
    let mut parts = Vec::new();
    params.map(&mut |name, t| parts.push(format!("{name}={:.3e}", t.norm())));
    parts.join(", ")
}

/// Better validation: higher AUPRC, ties broken by lower loss.
fn improves(auprc: f64, loss: f64, best: Option<(f64, f64)>) -> bool {
    match best {
        None => true,
        Some((best_auprc, best_loss)) => {
            let a = if auprc.is_nan() { f64::NEG_INFINITY } else { auprc };
            let b = if best_auprc.is_nan() { f64::NEG_INFINITY } else { best_auprc };
            a > b || (a == b && loss < best_loss)
        }
    }
}

/// Trains `model` on `train`. With a nonempty `valid` set the parameters of
/// the best validation epoch are returned and training stops after
/// `patience` epochs without improvement; otherwise the final parameters
/// are returned. Batch order is shuffled per epoch under `seed`.
pub fn train(
    mut model: Model,
    train: &[PatientJourney],
    valid: &[PatientJourney],
    weights: &ClassWeights,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Model, History)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = model.params.flatten();
    let mut adam = Adam::new(cfg, &flat);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, f64)> = None;
    let mut best_params = model.params.clone();
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let mut acc: Vec<Tensor> = flat.iter().map(|t| Tensor::zeros(t.shape())).collect();
            for &i in batch {
                let (loss, grads) = journey_gradient(&model, &train[i], weights, scale)?;
                if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite loss or gradient at epoch {epoch}, batch {}, journey {}; parameter norms: {}",
                        b + 1,
                        train[i].id,
                        norms_report(&model.params)
                    )));
                }
                total += loss;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.add_assign(g);
                }
            }
            adam.step(&mut flat, &acc);
            model.params = model.params.from_tensors(flat.clone())?;
        }
        let train_loss = total / train.len() as f64;

        let mut record = EpochRecord {
            epoch,
            train_loss,
            valid_loss: f64::NAN,
            valid_auroc: f64::NAN,
            valid_auprc: f64::NAN,
        };
        if valid.is_empty() {
            history.epochs.push(record);
            history.best_epoch = epoch;
            continue;
        }
        let scores = model.score_all(valid)?;
        let labels: Vec<u8> = valid.iter().map(|j| j.label).collect();
        let mut vloss = 0.0;
        for j in valid {
            vloss += journey_loss_value(&model, j, weights)?;
        }
        record.valid_loss = vloss / valid.len() as f64;
        record.valid_auroc = metrics::auroc(&scores, &labels).unwrap_or(f64::NAN);
        record.valid_auprc = metrics::auprc(&scores, &labels).unwrap_or(f64::NAN);
        log::info!(
            "epoch {epoch}: train_loss={:.5} valid_loss={:.5} valid_auroc={:.4} valid_auprc={:.4}",
            record.train_loss,
            record.valid_loss,
            record.valid_auroc,
            record.valid_auprc
        );
        let improved = improves(record.valid_auprc, record.valid_loss, best);
        history.epochs.push(record.clone());
        if improved {
            best = Some((record.valid_auprc, record.valid_loss));
            best_params = model.params.clone();
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if !valid.is_empty() {
        model.params = best_params;
    }
    Ok((model, history))
}

/// Scores every journey and reports AUROC/AUPRC.
pub fn evaluate(model: &Model, journeys: &[PatientJourney], seed: u64) -> Result<MetricsReport> {
    if journeys.is_empty() {
        return Err(Error::Data("cannot evaluate an empty set".into()));
    }
    let scores = model.score_all(journeys)?;
    let labels: Vec<u8> = journeys.iter().map(|j| j.label).collect();
    MetricsReport::compute(&scores, &labels, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_prefers_auprc_then_loss() {
        assert!(improves(0.5, 1.0, None));
        assert!(improves(0.6, 9.0, Some((0.5, 1.0))));
        assert!(!improves(0.4, 0.1, Some((0.5, 1.0))));
        assert!(improves(0.5, 0.9, Some((0.5, 1.0))));
        assert!(!improves(0.5, 1.0, Some((0.5, 1.0))));
        assert!(improves(0.1, 2.0, Some((f64::NAN, 1.0))));
    }
}
