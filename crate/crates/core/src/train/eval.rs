use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::graph::{forward, softmax_cross_entropy, Network};
use crate::error::{Error, Result};
use crate::model::ModelGraph;

const EVAL_BATCH: usize = 256;

/// Classification metrics over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub top1: f64,
    /// Top-`min(5, classes)` accuracy.
    pub top5: f64,
    pub mean_loss: f64,
    pub n: usize,
}

/// Zero-based rank of the true class: classes with a larger logit, or an
/// equal logit and lower index, rank ahead of it.
pub fn true_class_rank(logits: &[f32], label: usize) -> usize {
    let t = logits[label];
    logits
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > t || (v == t && j < label))
        .count()
}

pub fn evaluate(model: &ModelGraph, dataset: &Dataset) -> Result<EvalResult> {
    let net = Network::new(model)?;
    evaluate_weights(&net, model, &model.weights, dataset)
}

pub(crate) fn evaluate_weights(net: &Network, model: &ModelGraph, weights: &[f32], dataset: &Dataset) -> Result<EvalResult> {
    let classes = net.classes()?;
    if dataset.sample_len() != net.sample_len() {
        return Err(Error::Shape(format!(
            "dataset samples have {} values, model expects {}",
            dataset.sample_len(),
            net.sample_len()
        )));
    }
    let k5 = classes.min(5);
    let (mut hit1, mut hit5, mut loss_sum) = (0usize, 0usize, 0.0f64);
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, y) = dataset.gather(chunk);
        let cache = forward(net, model, weights, &x, chunk.len())?;
        let logits = cache.logits();
        let (loss, _) = softmax_cross_entropy(logits, &y, classes)?;
        loss_sum += loss as f64 * chunk.len() as f64;
        for (b, &label) in y.iter().enumerate() {
            let rank = true_class_rank(&logits[b * classes..(b + 1) * classes], label as usize);
            hit1 += (rank < 1) as usize;
            hit5 += (rank < k5) as usize;
        }
    }
    let n = dataset.len();
    let frac = |h: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    Ok(EvalResult {
        top1: frac(hit1),
        top5: frac(hit5),
        mean_loss: if n == 0 { 0.0 } else { loss_sum / n as f64 },
        n,
    })
}
