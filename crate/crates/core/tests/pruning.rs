mod common;

use common::*;
use proptest::prelude::*;
use prunekit::model::model_flops;
use prunekit::prune::{apply_mask, measure_sparsity, prune_block, prune_global, prune_uniform};
use prunekit::solver::{solve_global, solve_uniform_for_model, target_macs, verify_mask_flops};
use prunekit::SparsityMask;

#[test]
fn masks_match_sort_oracles() {
    for seed in 0..25 {
        let m = random_model(seed, 20_000);
        for s in [0.0, 0.3, 0.5, 0.77, 1.0] {
            assert_eq!(pruned_set(&m, &prune_uniform(&m, s).unwrap().0), uniform_oracle(&m, s), "uniform seed {seed} s {s}");
            assert_eq!(pruned_set(&m, &prune_global(&m, s).unwrap().0), global_oracle(&m, s), "global seed {seed} s {s}");
            let (block, _) = prune_block(&m, s).unwrap();
            assert_eq!(pruned_set(&m, &block), block_oracle(&m, s), "block seed {seed} s {s}");
            block.check_block_aligned(&m).unwrap();
        }
    }
}

#[test]
fn global_threshold_is_largest_pruned_magnitude() {
    let m = random_model(4, 5000);
    let order = global_oracle_order(&m);
    let (_, report) = prune_global(&m, 0.4).unwrap();
    assert_eq!(report.threshold, Some(order[count(0.4, order.len()) - 1].0));
    assert_eq!(prune_global(&m, 0.0).unwrap().1.threshold, Some(0.0));
}

#[test]
fn model_flops_matches_per_position_count() {
    for seed in 0..40 {
        let m = random_model(seed, 50_000);
        let report = model_flops(&m, None).unwrap();
        let brute: Vec<u64> = (0..m.layers.len()).map(|i| brute_layer_macs(&m, i)).collect();
        for (lf, &b) in report.per_layer.iter().zip(&brute) {
            assert_eq!(lf.macs, b, "layer {}", lf.name);
        }
        assert_eq!(report.total, brute.iter().sum::<u64>());
    }
}

#[test]
fn applied_mask_is_measured_back() {
    let m = random_model(10, 10_000);
    let (mask, _) = prune_uniform(&m, 0.4).unwrap();
    let pruned = apply_mask(&m, &mask).unwrap();
    let measured = measure_sparsity(&pruned);
    let zeros = pruned_set(&m, &mask).len();
    let exact_zeros: usize = measured.per_layer.iter().map(|l| l.pruned).sum();
    assert_eq!(exact_zeros, zeros);
    assert_eq!(apply_mask(&pruned, &mask).unwrap(), pruned);
}

#[test]
fn global_solver_matches_scan() {
    for seed in 0..30 {
        let m = random_model(seed, 3000);
        let flops = model_flops(&m, None).unwrap();
        let floor = flops.total - flops.prunable_total;
        for frac in [0.0, 0.25, 0.6, 1.0] {
            let target = flops.total - ((flops.total - floor) as f64 * frac) as u64;
            let (res, mask) = solve_global(&m, target as f64 / 1e6).unwrap();
            let (k, achieved) = brute_global_solve(&m, target).unwrap();
            assert_eq!(res.pruned_weights, k, "seed {seed} frac {frac}");
            assert_eq!(res.achieved_macs, achieved);
            assert!(verify_mask_flops(&m, &mask, target as f64 / 1e6).unwrap().ok);
        }
    }
}

#[test]
fn uniform_solve_reproduces_target_within_one_weight_per_layer() {
    let m = random_model(11, 20_000);
    let flops = model_flops(&m, None).unwrap();
    let target = flops.total - flops.prunable_total / 3;
    let s = solve_uniform_for_model(&m, target as f64 / 1e6).unwrap();
    let (mask, _) = prune_uniform(&m, s).unwrap();
    let achieved = model_flops(&m, Some(&mask)).unwrap().effective_total.unwrap();
    let slack: u64 = m.prunable_layers().map(|l| l.weight_reuse()).sum();
    assert!(achieved.abs_diff(target) <= slack, "{achieved} vs {target}");
}

#[test]
fn lower_targets_never_prune_fewer_weights() {
    let m = random_model(2, 4000);
    let flops = model_flops(&m, None).unwrap();
    let mut last = 0;
    for step in 0..=20u64 {
        let target = flops.total - flops.prunable_total * step / 20;
        let (res, _) = solve_global(&m, target as f64 / 1e6).unwrap();
        assert!(res.pruned_weights >= last);
        last = res.pruned_weights;
    }
    assert_eq!(target_macs(1.5).unwrap(), 1_500_000);
}

fn ranked(model: &prunekit::ModelGraph, mask: &SparsityMask) -> (Vec<f32>, Vec<f32>) {
    let (mut kept, mut pruned) = (Vec::new(), Vec::new());
    for (name, bits) in mask.layers() {
        let w = model.layer_weights(model.layer(name).unwrap());
        for (i, v) in w.iter().enumerate() {
            if bits.get(i) { kept.push(v.abs()) } else { pruned.push(v.abs()) }
        }
    }
    (kept, pruned)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn monotone_subsets_and_counts(seed in 0u64..10_000, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let m = random_model(seed, 4000);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for f in [prune_uniform, prune_global, prune_block] {
            let small = pruned_set(&m, &f(&m, lo).unwrap().0);
            let large = pruned_set(&m, &f(&m, hi).unwrap().0);
            prop_assert!(small.is_subset(&large));
        }
        let (g, report) = prune_global(&m, hi).unwrap();
        prop_assert_eq!(g.pruned(), count(hi, m.prunable_weight_count()));
        let expected = g.pruned() as f64 / g.total() as f64;
        prop_assert!((report.overall_prunable_sparsity - expected).abs() < 1e-15);
    }

    #[test]
    fn no_kept_weight_ranks_below_a_pruned_one(seed in 0u64..10_000, s in 0.0f64..=1.0) {
        let m = random_model(seed, 4000);
        let (kept, pruned) = ranked(&m, &prune_global(&m, s).unwrap().0);
        let max_pruned = pruned.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        prop_assert!(kept.iter().all(|&k| k >= max_pruned));
        let (mask, _) = prune_uniform(&m, s).unwrap();
        for (name, bits) in mask.layers() {
            let w = m.layer_weights(m.layer(name).unwrap());
            let maxp = (0..bits.len()).filter(|&i| !bits.get(i)).map(|i| w[i].abs()).fold(f32::NEG_INFINITY, f32::max);
            prop_assert!((0..bits.len()).filter(|&i| bits.get(i)).all(|i| w[i].abs() >= maxp));
        }
    }

    #[test]
    fn flops_are_additive_and_shrink_with_sparsity(seed in 0u64..10_000, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let m = random_model(seed, 8000);
        let dense = model_flops(&m, None).unwrap();
        prop_assert_eq!(dense.total, dense.per_layer.iter().map(|l| l.macs).sum::<u64>());
        let pr: u64 = dense.per_layer.iter().filter(|l| l.prunable).map(|l| l.macs).sum();
        prop_assert_eq!(dense.prunable_total, pr);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let e_lo = model_flops(&m, Some(&prune_global(&m, lo).unwrap().0)).unwrap().effective_total.unwrap();
        let e_hi = model_flops(&m, Some(&prune_global(&m, hi).unwrap().0)).unwrap().effective_total.unwrap();
        prop_assert!(e_hi <= e_lo && e_lo <= dense.total);
    }
}
