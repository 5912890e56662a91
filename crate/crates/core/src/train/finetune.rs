use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::eval::evaluate_weights;
use super::graph::{loss_and_gradients, Network};
use super::optim::{MaskedSgd, TrainConfig};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::prune::SparsityMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub smoothed_val_loss: f64,
    pub top1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were returned (lowest validation loss).
    pub best_epoch: usize,
    pub stop: StopReason,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,smoothed_val_loss,top1";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.val_loss, e.smoothed_val_loss, e.top1
            );
        }
        out
    }
}

/// Trains with masked momentum SGD until the smoothed validation loss
/// settles.
///
/// After epoch `t` the validation loss `L_t` feeds an exponential moving
/// average `S_t = α·L_t + (1 − α)·S_{t−1}` (with `S_1 = L_1`). Training stops
/// once `|S_t − S_{t−1}| / S_{t−1} < convergence_tol` or after `max_epochs`.
/// The weights of the epoch with the lowest validation loss are returned.
pub fn finetune(
    model: &ModelGraph,
    mask: Option<&SparsityMask>,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<(ModelGraph, History)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Dataset("training and validation sets must be non-empty".into()));
    }
    let net = Network::new(model)?;
    let mut sgd = MaskedSgd::new(model, mask)?;
    let mut weights = model.weights.clone();
    sgd.enforce(&mut weights);

    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(f64, usize, Vec<f32>)> = None;
    let mut stop = StopReason::MaxEpochs;
    for epoch in 1..=config.max_epochs {
        let order = train.shuffled_indices(config.seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64));
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = train.gather(chunk);
            let grads = loss_and_gradients(&net, model, &weights, &x, &y)?;
            if !grads.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    what: "training loss",
                    value: grads.loss as f64,
                });
            }
            loss_sum += grads.loss as f64 * chunk.len() as f64;
            sgd.step(&mut weights, &grads.flat, config)?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let eval = evaluate_weights(&net, model, &weights, val)?;
        if !eval.mean_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                what: "validation loss",
                value: eval.mean_loss,
            });
        }
        let prev_smoothed = epochs.last().map(|e| e.smoothed_val_loss);
        let smoothed = match prev_smoothed {
            None => eval.mean_loss,
            Some(prev) => config.smoothing_alpha * eval.mean_loss + (1.0 - config.smoothing_alpha) * prev,
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: eval.mean_loss,
            smoothed_val_loss: smoothed,
            top1: eval.top1,
        });
        if best.as_ref().is_none_or(|(l, _, _)| eval.mean_loss < *l) {
            best = Some((eval.mean_loss, epoch, weights.clone()));
        }
        if let Some(prev) = prev_smoothed {
            let change = (smoothed - prev).abs();
            let converged = if prev == 0.0 { change == 0.0 } else { change / prev < config.convergence_tol };
            if converged {
                stop = StopReason::Converged;
                break;
            }
        }
    }
    let (_, best_epoch, best_weights) = best.expect("at least one epoch");
    Ok((
        model.with_weights(best_weights)?,
        History {
            epochs,
            best_epoch,
            stop,
        },
    ))
}
