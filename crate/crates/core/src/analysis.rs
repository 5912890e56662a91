//! Layer sensitivity probes, per-layer sparsity patterns and compute-cost
//! accounting.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelGraph, Role};
use crate::prune::{prune_uniform, ratio, SparsityMask};
use crate::train::{evaluate_weights, Dataset, Network};

/// Sparsity used by [`layer_sensitivity`] unless told otherwise.
pub const DEFAULT_PROBE_SPARSITY: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSensitivity {
    pub name: String,
    pub role: Role,
    /// Top-1 accuracy with only this layer pruned.
    pub top1: f64,
}

/// Five-number summary of a group of values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Quartiles {
            min: sorted[0],
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

/// Quantile `p` of ascending `sorted`, interpolating linearly between the
/// two closest ranks (`h = (n - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty slice");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// One entry per prunable layer, manifest order.
    pub per_layer: Vec<LayerSensitivity>,
    pub by_role: BTreeMap<Role, Quartiles>,
    pub baseline_top1: f64,
    pub sparsity_used: f64,
}

impl SensitivityReport {
    pub const CSV_HEADER: &'static str = "layer,role,top1";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for l in &self.per_layer {
            out.push_str(&format!("{},{},{}\n", l.name, l.role.as_str(), l.top1));
        }
        out
    }

    /// `(layer position, top1)` pairs.
    pub fn plot_data(&self) -> Vec<(f64, f64)> {
        self.per_layer.iter().enumerate().map(|(i, l)| (i as f64, l.top1)).collect()
    }
}

/// Prunes each prunable layer on its own with uniform magnitude pruning at
/// `s`, evaluates top-1 without any retraining and groups the results by
/// layer role. `model` is never modified; each probe works on a copy of the
/// weight buffer.
pub fn layer_sensitivity(model: &ModelGraph, eval_set: &Dataset, s: f64) -> Result<SensitivityReport> {
    let net = Network::new(model)?;
    let baseline_top1 = evaluate_weights(&net, model, &model.weights, eval_set)?.top1;
    let (mask, _) = prune_uniform(model, s)?;
    let per_layer = mask
        .layers()
        .par_iter()
        .map(|(name, bits)| {
            let layer = model.layer(name).expect("mask built from model");
            let mut weights = model.weights.clone();
            let region = &mut weights[layer.weight_range()];
            for i in bits.zero_indices() {
                region[i] = 0.0;
            }
            let top1 = evaluate_weights(&net, model, &weights, eval_set)?.top1;
            Ok(LayerSensitivity {
                name: name.clone(),
                role: layer.role,
                top1,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut groups: BTreeMap<Role, Vec<f64>> = BTreeMap::new();
    for l in &per_layer {
        groups.entry(l.role).or_default().push(l.top1);
    }
    let by_role = groups
        .into_iter()
        .map(|(role, v)| (role, Quartiles::of(&v).expect("non-empty group")))
        .collect();
    Ok(SensitivityReport {
        per_layer,
        by_role,
        baseline_top1,
        sparsity_used: s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternEntry {
    pub name: String,
    /// Position among the model's prunable layers.
    pub depth: usize,
    pub role: Role,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityPattern {
    pub layers: Vec<PatternEntry>,
}

impl SparsityPattern {
    pub const CSV_HEADER: &'static str = "layer,depth,role,sparsity";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for e in &self.layers {
            out.push_str(&format!("{},{},{},{}\n", e.name, e.depth, e.role.as_str(), e.sparsity));
        }
        out
    }

    /// `(depth, sparsity)` pairs.
    pub fn plot_data(&self) -> Vec<(f64, f64)> {
        self.layers.iter().map(|e| (e.depth as f64, e.sparsity)).collect()
    }
}

/// Sparsity of every prunable layer in manifest order. Layers the mask does
/// not mention are reported as dense.
pub fn sparsity_pattern(mask: &SparsityMask, model: &ModelGraph) -> Result<SparsityPattern> {
    mask.check_against(model)?;
    let layers = model
        .prunable_layers()
        .enumerate()
        .map(|(depth, layer)| PatternEntry {
            name: layer.name.clone(),
            depth,
            role: layer.role,
            sparsity: mask.layer(&layer.name).map_or(0.0, |b| ratio(b.count_zeros(), b.len())),
        })
        .collect();
    Ok(SparsityPattern { layers })
}

/// Training cost in GPU-hours: nodes x GPUs per node x wall-clock hours.
pub fn gpu_hours(nodes: u32, gpus_per_node: u32, hours_to_convergence: f64) -> Result<f64> {
    if nodes == 0 || gpus_per_node == 0 || !(hours_to_convergence > 0.0) || !hours_to_convergence.is_finite() {
        return Err(Error::Config(format!(
            "gpu_hours needs positive inputs, got nodes={nodes}, gpus_per_node={gpus_per_node}, hours={hours_to_convergence}"
        )));
    }
    Ok(f64::from(nodes) * f64::from(gpus_per_node) * hours_to_convergence)
}

/// How many times cheaper `cost` is than `reference`.
pub fn speedup(reference: f64, cost: f64) -> Result<f64> {
    if !(reference > 0.0 && cost > 0.0) || !reference.is_finite() || !cost.is_finite() {
        return Err(Error::Config(format!("speedup needs positive costs, got {reference} and {cost}")));
    }
    Ok(reference / cost)
}
