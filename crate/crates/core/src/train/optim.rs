use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::prune::SparsityMask;

/// Learning rates the fine-tuning grid draws from.
pub const LR_GRID: [f64; 3] = [4e-5, 8e-5, 1.6e-4];

/// SGD and early-stopping settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Relative change of the smoothed validation loss below which training
    /// stops.
    pub convergence_tol: f64,
    /// Weight of the newest epoch in the validation-loss moving average.
    pub smoothing_alpha: f64,
    /// Seed for the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: LR_GRID[2],
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 32,
            max_epochs: 50,
            convergence_tol: 1e-4,
            smoothing_alpha: 0.3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be finite and non-negative");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if !(self.convergence_tol > 0.0) {
            return bad("convergence_tol must be positive");
        }
        if !(self.smoothing_alpha > 0.0 && self.smoothing_alpha <= 1.0) {
            return bad("smoothing_alpha must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Momentum SGD that keeps a fixed set of weights at exactly zero.
///
/// After every update the masked weights and their velocities are reset to
/// zero, so pruned weights can never come back. Weight decay applies to
/// unmasked weights only, never to biases.
#[derive(Debug, Clone)]
pub struct MaskedSgd {
    velocity: Vec<f32>,
    decays: Vec<bool>,
    pruned: Vec<usize>,
}

impl MaskedSgd {
    pub fn new(model: &ModelGraph, mask: Option<&SparsityMask>) -> Result<Self> {
        let mut decays = vec![false; model.weights.len()];
        for layer in &model.layers {
            decays[layer.weight_range()].fill(true);
        }
        let mut pruned = Vec::new();
        if let Some(mask) = mask {
            mask.check_against(model)?;
            for (name, bits) in mask.layers() {
                let start = model.layer(name).expect("checked").weight_offset;
                for i in bits.zero_indices() {
                    pruned.push(start + i);
                    decays[start + i] = false;
                }
            }
        }
        Ok(MaskedSgd {
            velocity: vec![0.0; model.weights.len()],
            decays,
            pruned,
        })
    }

    /// Absolute buffer indices held at zero.
    pub fn pruned_indices(&self) -> &[usize] {
        &self.pruned
    }

    /// Zeroes every masked weight in place.
    pub fn enforce(&self, weights: &mut [f32]) {
        for &i in &self.pruned {
            weights[i] = 0.0;
        }
    }

    /// `v = momentum * v + (g + wd * w)`, `w -= lr * v`, then re-mask.
    pub fn step(&mut self, weights: &mut [f32], grads: &[f32], config: &TrainConfig) -> Result<()> {
        if grads.len() != weights.len() || weights.len() != self.velocity.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} weights",
                grads.len(),
                weights.len()
            )));
        }
        let (lr, mom, wd) = (config.learning_rate as f32, config.momentum as f32, config.weight_decay as f32);
        for (((w, &g), v), &decay) in weights.iter_mut().zip(grads).zip(&mut self.velocity).zip(&self.decays) {
            let g = if decay { g + wd * *w } else { g };
            *v = mom * *v + g;
            *w -= lr * *v;
        }
        for &i in &self.pruned {
            weights[i] = 0.0;
            self.velocity[i] = 0.0;
        }
        Ok(())
    }
}

/// One masked SGD update, returning the updated model.
pub fn masked_step(
    model: &ModelGraph,
    grads: &Gradients<f32>,
    mask: Option<&SparsityMask>,
    config: &TrainConfig,
    state: &mut MaskedSgd,
) -> Result<ModelGraph> {
    if let Some(mask) = mask {
        mask.check_against(model)?;
    }
    let mut weights = model.weights.clone();
    state.step(&mut weights, &grads.flat, config)?;
    model.with_weights(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GraphBuilder, Role};
    use crate::prune::prune_uniform;

    fn model() -> ModelGraph {
        let mut b = GraphBuilder::new("t", 3, 2, 2);
        b.pointwise("p", 4, Role::Pw).global_avg_pool("g").linear("fc", 2, false);
        b.build_random(4).unwrap()
    }

    fn grads(m: &ModelGraph) -> Gradients<f32> {
        Gradients {
            loss: 0.0,
            flat: (0..m.weights.len()).map(|i| (i as f32 * 0.7).cos()).collect(),
        }
    }

    #[test]
    fn pruned_entries_stay_zero() {
        let m = model();
        let (mask, _) = prune_uniform(&m, 0.5).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            weight_decay: 0.01,
            ..TrainConfig::default()
        };
        let mut sgd = MaskedSgd::new(&m, Some(&mask)).unwrap();
        let next = masked_step(&m, &grads(&m), Some(&mask), &cfg, &mut sgd).unwrap();
        let layer = next.layer("p").unwrap();
        for i in mask.layer("p").unwrap().zero_indices() {
            assert_eq!(next.layer_weights(layer)[i].to_bits(), 0f32.to_bits());
        }
    }

    #[test]
    fn all_ones_mask_equals_plain_sgd() {
        let m = model();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let ones = SparsityMask::all_ones(&m, crate::prune::PruneMethod::UniformMagnitude);
        let mut a = MaskedSgd::new(&m, Some(&ones)).unwrap();
        let mut b = MaskedSgd::new(&m, None).unwrap();
        let x = masked_step(&m, &grads(&m), Some(&ones), &cfg, &mut a).unwrap();
        let y = masked_step(&m, &grads(&m), None, &cfg, &mut b).unwrap();
        assert_eq!(x, y);
        for (i, (&w0, &w1)) in m.weights.iter().zip(&y.weights).enumerate() {
            let g = (i as f32 * 0.7).cos();
            assert_eq!(w1, w0 - 0.05f32 * g);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            convergence_tol: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
