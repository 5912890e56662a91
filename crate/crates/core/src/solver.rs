//! Sparsity levels that meet a FLOPs budget.
//!
//! Pruning only touches pointwise layers, so with `F` the dense total,
//! `F_pw` the pointwise share and `T` the target, uniform pruning needs
//! `S = (F - T) / F_pw`: the pointwise layers then consume `(1 - S) * F_pw`.
//! Global pruning has no closed form because each pruned weight saves as many
//! MACs as its layer has output positions; [`solve_global`] walks the global
//! magnitude order and accumulates those savings exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{model_flops, ModelGraph};
use crate::prune::{global_mask_from_order, global_order, PruneReport, SparsityMask};

/// Dense, target and pointwise FLOPs of a seed model, in MFLOPs (MACs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopsTarget {
    pub seed_total_mflops: f64,
    pub target_total_mflops: f64,
    pub prunable_mflops: f64,
}

impl FlopsTarget {
    pub fn new(seed_total_mflops: f64, target_total_mflops: f64, prunable_mflops: f64) -> Self {
        FlopsTarget {
            seed_total_mflops,
            target_total_mflops,
            prunable_mflops,
        }
    }
}

/// Uniform sparsity that brings `seed_total` down to `target_total` by
/// pruning pointwise layers only.
pub fn solve_uniform(target: &FlopsTarget) -> Result<f64> {
    let FlopsTarget {
        seed_total_mflops: seed,
        target_total_mflops: goal,
        prunable_mflops: prunable,
    } = *target;
    if !(seed.is_finite() && goal.is_finite() && prunable.is_finite()) {
        return Err(Error::NonFinite("FLOPs target".into()));
    }
    if seed <= 0.0 || goal <= 0.0 || prunable <= 0.0 {
        return Err(Error::InvalidTarget("FLOPs must be positive".into()));
    }
    if prunable > seed {
        return Err(Error::InvalidTarget(format!(
            "prunable FLOPs {prunable} exceed the seed total {seed}"
        )));
    }
    let s = (seed - goal) / prunable;
    if s < 0.0 {
        return Err(Error::InvalidTarget(format!(
            "target {goal} MFLOPs is larger than the seed's {seed}"
        )));
    }
    if s > 1.0 {
        return Err(Error::Unreachable {
            target_mflops: goal,
            reason: format!(
                "needs sparsity {s:.4} > 1; removing every pointwise weight leaves {:.3} MFLOPs",
                seed - prunable
            ),
        });
    }
    Ok(s)
}

/// Pointwise FLOPs implied by a known `(target, sparsity)` pair, i.e. the
/// uniform relation solved for `F_pw`.
pub fn implied_prunable_mflops(seed_total_mflops: f64, target_total_mflops: f64, sparsity: f64) -> f64 {
    (seed_total_mflops - target_total_mflops) / sparsity
}

/// Outcome of checking published `(target, sparsity)` pairs of one seed
/// against each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformConsistency {
    pub seed_total_mflops: f64,
    /// `F_pw` implied by each pair, in input order.
    pub implied_prunable_mflops: Vec<f64>,
    /// Sparsity of every pair after the first, predicted from the first
    /// pair's implied `F_pw`.
    pub predicted: Vec<f64>,
    /// Largest `|predicted - reported| / reported`.
    pub max_relative_error: f64,
    pub consistent: bool,
    pub issues: Vec<String>,
}

/// Inverts the uniform relation on the first pair and predicts the others.
///
/// A seed is flagged when the predictions disagree by more than
/// `rel_tol`, or when any implied pointwise share exceeds the seed total.
pub fn check_uniform_consistency(seed_total_mflops: f64, pairs: &[(f64, f64)], rel_tol: f64) -> UniformConsistency {
    let implied: Vec<f64> = pairs
        .iter()
        .map(|&(t, s)| implied_prunable_mflops(seed_total_mflops, t, s))
        .collect();
    let mut issues = Vec::new();
    for (&(t, _), &f) in pairs.iter().zip(&implied) {
        if f > seed_total_mflops {
            issues.push(format!(
                "target {t}: implied pointwise FLOPs {f:.1} exceed seed total {seed_total_mflops}"
            ));
        }
    }
    let mut predicted = Vec::new();
    let mut max_rel = 0.0f64;
    if let Some(&base) = implied.first() {
        for &(t, s) in &pairs[1..] {
            let p = (seed_total_mflops - t) / base;
            let rel = ((p - s) / s).abs();
            max_rel = max_rel.max(rel);
            if rel > rel_tol {
                issues.push(format!("target {t}: predicted sparsity {p:.4} vs reported {s:.4}"));
            }
            predicted.push(p);
        }
    }
    UniformConsistency {
        seed_total_mflops,
        implied_prunable_mflops: implied,
        predicted,
        max_relative_error: max_rel,
        consistent: issues.is_empty(),
        issues,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSparsity {
    pub name: String,
    pub sparsity: f64,
}

/// Result of a FLOPs-targeted solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub method: String,
    pub sparsity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f32>,
    pub achieved_mflops: f64,
    pub per_layer: Vec<NamedSparsity>,
    pub target_mflops: f64,
    pub achieved_macs: u64,
    pub pruned_weights: usize,
}

impl SolveResult {
    pub(crate) fn new(method: &str, report: &PruneReport, target_mflops: f64, achieved_macs: u64) -> Self {
        SolveResult {
            method: method.to_string(),
            sparsity: report.overall_prunable_sparsity,
            threshold: report.threshold,
            achieved_mflops: achieved_macs as f64 / 1e6,
            per_layer: report
                .per_layer
                .iter()
                .map(|l| NamedSparsity {
                    name: l.name.clone(),
                    sparsity: l.sparsity,
                })
                .collect(),
            target_mflops,
            achieved_macs,
            pruned_weights: report.per_layer.iter().map(|l| l.pruned).sum(),
        }
    }
}

/// MFLOPs budget expressed as a whole number of MACs.
pub fn target_macs(target_mflops: f64) -> Result<u64> {
    if !target_mflops.is_finite() || target_mflops < 0.0 {
        return Err(Error::InvalidTarget(format!("{target_mflops} MFLOPs")));
    }
    Ok((target_mflops * 1e6).round() as u64)
}

/// Global magnitude pruning to a FLOPs budget.
///
/// Weights are visited in global ranking order; each removal saves
/// `out_h * out_w` MACs of its layer. The smallest prefix whose removal
/// brings the effective total to at most the target is pruned, so the result
/// undershoots the target by less than one weight's saving.
pub fn solve_global(model: &ModelGraph, target_mflops: f64) -> Result<(SolveResult, SparsityMask)> {
    let target = target_macs(target_mflops)?;
    if model.prunable_layers().next().is_none() {
        return Err(Error::NoPrunableLayers);
    }
    let dense = model_flops(model, None)?;
    if target > dense.total {
        return Err(Error::InvalidTarget(format!(
            "target {target_mflops} MFLOPs exceeds the model's {} MFLOPs",
            dense.total_mflops()
        )));
    }
    let floor = dense.total - dense.prunable_total;
    if floor > target {
        return Err(Error::Unreachable {
            target_mflops,
            reason: format!(
                "pruning every pointwise weight still leaves {} MFLOPs",
                floor as f64 / 1e6
            ),
        });
    }
    let order = global_order(model)?;
    let reuse: Vec<u64> = model.layers.iter().map(|l| l.weight_reuse()).collect();
    let mut effective = dense.total;
    let mut k = 0;
    while effective > target {
        effective -= reuse[order[k].layer];
        k += 1;
    }
    let (mask, report) = global_mask_from_order(model, &order, k);
    Ok((SolveResult::new("global", &report, target_mflops, effective), mask))
}

/// Uniform sparsity for a model from its own FLOPs counts.
pub fn solve_uniform_for_model(model: &ModelGraph, target_mflops: f64) -> Result<f64> {
    let dense = model_flops(model, None)?;
    if dense.prunable_total == 0 {
        return Err(Error::NoPrunableLayers);
    }
    if (target_macs(target_mflops)?) == dense.total {
        return Ok(0.0);
    }
    solve_uniform(&FlopsTarget::new(dense.total_mflops(), target_mflops, dense.prunable_mflops()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopsCheck {
    pub ok: bool,
    pub achieved_macs: u64,
    pub achieved_mflops: f64,
    pub target_macs: u64,
}

/// Recomputes the masked FLOPs and compares them with the budget. Depends
/// only on the mask, never on weight values.
pub fn verify_mask_flops(model: &ModelGraph, mask: &SparsityMask, target_mflops: f64) -> Result<FlopsCheck> {
    let target = target_macs(target_mflops)?;
    let report = model_flops(model, Some(mask))?;
    let achieved = report.effective_or_total();
    Ok(FlopsCheck {
        ok: achieved <= target,
        achieved_macs: achieved,
        achieved_mflops: achieved as f64 / 1e6,
        target_macs: target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GraphBuilder, Role};

    #[test]
    fn b_to_a_row() {
        // F_pw inverted from the published 26.59% row must give it back.
        let f_pw = implied_prunable_mflops(461.6, 356.6, 0.2659);
        assert!((f_pw - 394.9).abs() < 0.05);
        let s = solve_uniform(&FlopsTarget::new(461.6, 356.6, f_pw)).unwrap();
        assert!((s - 0.2659).abs() < 1e-12);
        let s = solve_uniform(&FlopsTarget::new(461.6, 356.6, 394.9)).unwrap();
        assert!((s - 0.2659).abs() < 5e-5, "{s}");
    }

    #[test]
    fn equal_target_is_zero() {
        assert_eq!(solve_uniform(&FlopsTarget::new(500.0, 500.0, 400.0)).unwrap(), 0.0);
    }

    #[test]
    fn c_rows() {
        let f_pw = implied_prunable_mflops(557.0, 356.6, 0.407);
        assert!((f_pw - 492.4).abs() < 0.05, "{f_pw}");
        let a = solve_uniform(&FlopsTarget::new(557.0, 356.6, f_pw)).unwrap();
        let b = solve_uniform(&FlopsTarget::new(557.0, 461.6, f_pw)).unwrap();
        assert!((a - 0.4070).abs() < 5e-5, "{a}");
        assert!((b - 0.1938).abs() < 1e-4, "{b}");
        assert!(((b - 0.194) / 0.194).abs() < 0.005);
    }

    #[test]
    fn out_of_range_targets() {
        assert!(matches!(
            solve_uniform(&FlopsTarget::new(100.0, 10.0, 50.0)),
            Err(Error::Unreachable { .. })
        ));
        assert!(matches!(
            solve_uniform(&FlopsTarget::new(100.0, 120.0, 50.0)),
            Err(Error::InvalidTarget(_))
        ));
    }

    fn one_spatial_size() -> ModelGraph {
        let mut b = GraphBuilder::new("t", 4, 3, 3);
        b.with_bias(false)
            .pointwise("a", 6, Role::Pw)
            .relu("r")
            .pointwise("b", 4, Role::Pwl);
        b.build_random(5).unwrap()
    }

    #[test]
    fn uniform_multiplier_degenerates() {
        let m = one_spatial_size();
        let dense = model_flops(&m, None).unwrap().total;
        // every weight saves 9 MACs
        let target = dense - 9 * 10 - 3;
        let (res, mask) = solve_global(&m, target as f64 / 1e6).unwrap();
        assert_eq!(res.pruned_weights, 11);
        assert_eq!(res.achieved_macs, dense - 9 * 11);
        assert!(verify_mask_flops(&m, &mask, target as f64 / 1e6).unwrap().ok);
    }

    #[test]
    fn target_equal_to_total() {
        let m = one_spatial_size();
        let dense = model_flops(&m, None).unwrap().total;
        let (res, mask) = solve_global(&m, dense as f64 / 1e6).unwrap();
        assert_eq!(res.pruned_weights, 0);
        assert_eq!(res.sparsity, 0.0);
        assert_eq!(res.threshold, Some(0.0));
        assert_eq!(mask.pruned(), 0);
    }

    #[test]
    fn unreachable_global_target() {
        let mut b = GraphBuilder::new("t", 2, 4, 4);
        b.conv("c", 2, 3, 1, 1, Role::Other).pointwise("p", 2, Role::Pw);
        let m = b.build_random(1).unwrap();
        assert!(matches!(solve_global(&m, 1e-6), Err(Error::Unreachable { .. })));
    }

    #[test]
    fn all_ones_mask_fails_lower_target() {
        let m = one_spatial_size();
        let mask = SparsityMask::all_ones(&m, crate::prune::PruneMethod::GlobalMagnitude);
        let dense = model_flops(&m, None).unwrap().total;
        let check = verify_mask_flops(&m, &mask, (dense - 1) as f64 / 1e6).unwrap();
        assert!(!check.ok);
        assert_eq!(check.achieved_macs, dense);
    }
}
