//! Magnitude pruning masks: construction, application and measurement.

mod bitset;
mod file;
mod methods;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelGraph;

pub use bitset::Bitset;
pub(crate) use methods::global_mask_from_order;
pub use file::{load_mask, mask_from_json, mask_to_json, save_mask, MaskFile};
pub use methods::{
    block_mask, block_scores, global_order, prune_block, prune_global, prune_global_count, prune_uniform,
    prune_count, RankedWeight, BLOCK_WIDTH,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMethod {
    GlobalMagnitude,
    UniformMagnitude,
    BlockMagnitude,
}

impl PruneMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PruneMethod::GlobalMagnitude => "global_magnitude",
            PruneMethod::UniformMagnitude => "uniform_magnitude",
            PruneMethod::BlockMagnitude => "block_magnitude",
        }
    }
}

/// Per-layer keep/remove bitsets over prunable layers, in model order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityMask {
    pub method: PruneMethod,
    /// `(rows, cols)` of a pruning block; `(1, 4)` in block mode.
    pub block_shape: Option<(usize, usize)>,
    layers: Vec<(String, Bitset)>,
}

impl SparsityMask {
    pub fn from_layers(method: PruneMethod, block_shape: Option<(usize, usize)>, layers: Vec<(String, Bitset)>) -> Self {
        SparsityMask {
            method,
            block_shape,
            layers,
        }
    }

    /// Keeps every weight of every prunable layer.
    pub fn all_ones(model: &ModelGraph, method: PruneMethod) -> Self {
        let layers = model
            .prunable_layers()
            .map(|l| (l.name.clone(), Bitset::ones(l.weight_len)))
            .collect();
        SparsityMask::from_layers(method, None, layers)
    }

    pub fn layers(&self) -> &[(String, Bitset)] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&Bitset> {
        self.layers.iter().find(|(n, _)| n == name).map(|(_, b)| b)
    }

    pub fn kept(&self) -> usize {
        self.layers.iter().map(|(_, b)| b.count_ones()).sum()
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(|(_, b)| b.len()).sum()
    }

    pub fn pruned(&self) -> usize {
        self.total() - self.kept()
    }

    /// Fraction of masked-out weights over all covered layers.
    pub fn sparsity(&self) -> f64 {
        ratio(self.pruned(), self.total())
    }

    /// Every layer named must exist, be prunable and have a bitset of the
    /// layer's `weight_len`.
    pub fn check_against(&self, model: &ModelGraph) -> Result<()> {
        for (name, bits) in &self.layers {
            let layer = model
                .layer(name)
                .ok_or_else(|| Error::MaskMismatch(format!("layer `{name}` is not in the model")))?;
            if !layer.prunable {
                return Err(Error::MaskMismatch(format!("layer `{name}` is not prunable")));
            }
            if bits.len() != layer.weight_len {
                return Err(Error::MaskMismatch(format!(
                    "layer `{name}` has {} weights, mask has {} bits",
                    layer.weight_len,
                    bits.len()
                )));
            }
        }
        Ok(())
    }

    /// Confirms that zeros only occur in whole aligned 1x4 blocks along each
    /// output row (the trailing block of a row may be shorter).
    pub fn check_block_aligned(&self, model: &ModelGraph) -> Result<()> {
        self.check_against(model)?;
        for (name, bits) in &self.layers {
            let layer = model.layer(name).expect("checked above");
            let cols = layer.weight_cols();
            for row in 0..layer.out_channels {
                for (block, start) in (0..cols).step_by(BLOCK_WIDTH).enumerate() {
                    let end = (start + BLOCK_WIDTH).min(cols);
                    let first = bits.get(row * cols + start);
                    if (start..end).any(|c| bits.get(row * cols + c) != first) {
                        return Err(Error::BlockAlignment {
                            layer: name.clone(),
                            row,
                            block,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub name: String,
    pub pruned: usize,
    pub total: usize,
    pub sparsity: f64,
}

/// Sparsity of a pruning decision or of a model's weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub per_layer: Vec<LayerSparsity>,
    /// Removed fraction over all prunable weights.
    pub overall_prunable_sparsity: f64,
    /// Zero fraction over every weight in the model, prunable or not. Only
    /// filled by [`measure_sparsity`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall_model_sparsity: Option<f64>,
    /// Magnitude of the largest pruned weight (global mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f32>,
}

impl PruneReport {
    pub fn from_mask(mask: &SparsityMask, threshold: Option<f32>) -> Self {
        let per_layer = mask
            .layers
            .iter()
            .map(|(name, bits)| LayerSparsity {
                name: name.clone(),
                pruned: bits.count_zeros(),
                total: bits.len(),
                sparsity: ratio(bits.count_zeros(), bits.len()),
            })
            .collect();
        PruneReport {
            per_layer,
            overall_prunable_sparsity: mask.sparsity(),
            overall_model_sparsity: None,
            threshold,
        }
    }

    pub fn layer_sparsity(&self, name: &str) -> Option<f64> {
        self.per_layer.iter().find(|l| l.name == name).map(|l| l.sparsity)
    }
}

pub(crate) fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Zeroes masked weights; all other values are copied bit for bit.
pub fn apply_mask(model: &ModelGraph, mask: &SparsityMask) -> Result<ModelGraph> {
    mask.check_against(model)?;
    let mut weights = model.weights.clone();
    for (name, bits) in &mask.layers {
        let layer = model.layer(name).expect("checked above");
        let region = &mut weights[layer.weight_range()];
        for i in bits.zero_indices() {
            region[i] = 0.0;
        }
    }
    model.with_weights(weights)
}

/// Fraction of exactly-zero weights per prunable layer, over all prunable
/// weights, and over every weight in the model. Biases are not counted.
pub fn measure_sparsity(model: &ModelGraph) -> PruneReport {
    let zeros = |w: &[f32]| w.iter().filter(|&&x| x == 0.0).count();
    let mut per_layer = Vec::new();
    let (mut pruned, mut total) = (0, 0);
    let (mut all_zero, mut all_total) = (0, 0);
    for layer in &model.layers {
        let w = model.layer_weights(layer);
        let z = zeros(w);
        all_zero += z;
        all_total += w.len();
        if layer.prunable {
            pruned += z;
            total += w.len();
            per_layer.push(LayerSparsity {
                name: layer.name.clone(),
                pruned: z,
                total: w.len(),
                sparsity: ratio(z, w.len()),
            });
        }
    }
    PruneReport {
        per_layer,
        overall_prunable_sparsity: ratio(pruned, total),
        overall_model_sparsity: Some(ratio(all_zero, all_total)),
        threshold: None,
    }
}
