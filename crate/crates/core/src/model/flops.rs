use serde::{Deserialize, Serialize};

use super::{LayerSpec, ModelGraph};
use crate::error::Result;
use crate::prune::SparsityMask;

/// Dense multiply-accumulate count of one layer.
///
/// Each weight of a conv or linear layer is used once per output position,
/// so the count is `weight_len * out_h * out_w`. Weightless ops and biases
/// count zero.
pub fn layer_flops(layer: &LayerSpec) -> u64 {
    if !layer.op_kind.has_weights() {
        return 0;
    }
    layer.weight_len as u64 * layer.weight_reuse()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub name: String,
    pub macs: u64,
    /// MACs after masking; equals `macs` for layers the mask does not cover.
    pub effective_macs: u64,
    pub prunable: bool,
}

/// Per-layer and total MAC counts, labelled FLOPs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub per_layer: Vec<LayerFlops>,
    pub total: u64,
    pub prunable_total: u64,
    /// Present only when a mask was supplied.
    pub effective_total: Option<u64>,
}

impl FlopsReport {
    pub fn get(&self, name: &str) -> Option<&LayerFlops> {
        self.per_layer.iter().find(|l| l.name == name)
    }

    pub fn total_mflops(&self) -> f64 {
        self.total as f64 / 1e6
    }

    pub fn prunable_mflops(&self) -> f64 {
        self.prunable_total as f64 / 1e6
    }

    /// Effective total, falling back to the dense total without a mask.
    pub fn effective_or_total(&self) -> u64 {
        self.effective_total.unwrap_or(self.total)
    }

    pub fn effective_mflops(&self) -> f64 {
        self.effective_or_total() as f64 / 1e6
    }

    /// The same report with every count doubled (one multiply plus one add
    /// per MAC).
    pub fn strict_flops(&self) -> FlopsReport {
        FlopsReport {
            per_layer: self
                .per_layer
                .iter()
                .map(|l| LayerFlops {
                    macs: 2 * l.macs,
                    effective_macs: 2 * l.effective_macs,
                    ..l.clone()
                })
                .collect(),
            total: 2 * self.total,
            prunable_total: 2 * self.prunable_total,
            effective_total: self.effective_total.map(|t| 2 * t),
        }
    }
}

/// Counts MACs for every layer; with a mask, masked layers report
/// `kept_weights * out_h * out_w`.
pub fn model_flops(model: &ModelGraph, mask: Option<&SparsityMask>) -> Result<FlopsReport> {
    if let Some(mask) = mask {
        mask.check_against(model)?;
    }
    let mut per_layer = Vec::with_capacity(model.layers.len());
    let (mut total, mut prunable_total, mut effective_total) = (0u64, 0u64, 0u64);
    for layer in &model.layers {
        let macs = layer_flops(layer);
        let effective_macs = match mask.and_then(|m| m.layer(&layer.name)) {
            Some(bits) => bits.count_ones() as u64 * layer.weight_reuse(),
            None => macs,
        };
        total += macs;
        effective_total += effective_macs;
        if layer.prunable {
            prunable_total += macs;
        }
        per_layer.push(LayerFlops {
            name: layer.name.clone(),
            macs,
            effective_macs,
            prunable: layer.prunable,
        });
    }
    Ok(FlopsReport {
        per_layer,
        total,
        prunable_total,
        effective_total: mask.map(|_| effective_total),
    })
}
