use std::cmp::Ordering;

use rayon::prelude::*;

use super::{Bitset, PruneMethod, PruneReport, SparsityMask};
use crate::error::{Error, Result};
use crate::model::{LayerSpec, ModelGraph};

/// Width of a pruning block along the input axis.
pub const BLOCK_WIDTH: usize = 4;

/// Number of units to prune out of `n` at sparsity `s`: `round(s * n)`,
/// halves rounded up.
pub fn prune_count(s: f64, n: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidSparsity(s));
    }
    Ok(((s * n as f64 + 0.5).floor() as usize).min(n))
}

fn magnitudes(model: &ModelGraph, layer: &LayerSpec) -> Result<Vec<f32>> {
    model
        .layer_weights(layer)
        .iter()
        .map(|w| {
            if w.is_finite() {
                Ok(w.abs())
            } else {
                Err(Error::NonFinite(format!("weights of layer `{}`", layer.name)))
            }
        })
        .collect()
}

/// Indices `0..keys.len()` ordered by ascending key; equal keys keep
/// ascending index order.
fn ascending_order<K: Copy + Send + Sync>(keys: &[K], cmp: impl Fn(&K, &K) -> Ordering + Sync) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.par_sort_by(|&a, &b| cmp(&keys[a], &keys[b]).then(a.cmp(&b)));
    order
}

/// Uniform layer-wise magnitude pruning: in each prunable layer of `n`
/// weights the `round(s * n)` smallest magnitudes are removed, lower flat
/// index first among equal magnitudes.
pub fn prune_uniform(model: &ModelGraph, s: f64) -> Result<(SparsityMask, PruneReport)> {
    prune_count(s, 0)?;
    let layers: Vec<&LayerSpec> = model.prunable_layers().collect();
    let masks = layers
        .par_iter()
        .map(|layer| {
            let mags = magnitudes(model, layer)?;
            let k = prune_count(s, mags.len())?;
            let mut bits = Bitset::ones(mags.len());
            for &i in ascending_order(&mags, |a, b| a.total_cmp(b)).iter().take(k) {
                bits.set(i, false);
            }
            Ok((layer.name.clone(), bits))
        })
        .collect::<Result<Vec<_>>>()?;
    let mask = SparsityMask::from_layers(PruneMethod::UniformMagnitude, None, masks);
    let report = PruneReport::from_mask(&mask, None);
    Ok((mask, report))
}

/// One prunable weight in global ranking order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedWeight {
    pub magnitude: f32,
    /// Index into `model.layers`.
    pub layer: usize,
    /// Flat index within the layer's weight region.
    pub index: usize,
}

/// All prunable weights sorted by `(|w|, layer position, flat index)`.
pub fn global_order(model: &ModelGraph) -> Result<Vec<RankedWeight>> {
    let mut all = Vec::with_capacity(model.prunable_weight_count());
    for (li, layer) in model.layers.iter().enumerate() {
        if !layer.prunable {
            continue;
        }
        for (index, magnitude) in magnitudes(model, layer)?.into_iter().enumerate() {
            all.push(RankedWeight {
                magnitude,
                layer: li,
                index,
            });
        }
    }
    // (layer, index) is already ascending, so a stable sort on magnitude
    // gives the full tie order.
    all.par_sort_by(|a, b| a.magnitude.total_cmp(&b.magnitude));
    Ok(all)
}

/// Global magnitude pruning: the `round(s * N)` smallest of all `N` prunable
/// weights are removed.
pub fn prune_global(model: &ModelGraph, s: f64) -> Result<(SparsityMask, PruneReport)> {
    let n = model.prunable_weight_count();
    let k = prune_count(s, n)?;
    if model.prunable_layers().next().is_none() {
        return Err(Error::NoPrunableLayers);
    }
    prune_global_count(model, k)
}

/// Global pruning of exactly `k` weights. `report.threshold` is the
/// magnitude of the largest pruned weight, 0 when nothing is pruned.
pub fn prune_global_count(model: &ModelGraph, k: usize) -> Result<(SparsityMask, PruneReport)> {
    if model.prunable_layers().next().is_none() {
        return Err(Error::NoPrunableLayers);
    }
    let order = global_order(model)?;
    let k = k.min(order.len());
    Ok(global_mask_from_order(model, &order, k))
}

pub(crate) fn global_mask_from_order(model: &ModelGraph, order: &[RankedWeight], k: usize) -> (SparsityMask, PruneReport) {
    let mut bits: Vec<(usize, Bitset)> = model
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.prunable)
        .map(|(i, l)| (i, Bitset::ones(l.weight_len)))
        .collect();
    let mut slot_of = vec![usize::MAX; model.layers.len()];
    for (slot, (li, _)) in bits.iter().enumerate() {
        slot_of[*li] = slot;
    }
    for w in &order[..k] {
        bits[slot_of[w.layer]].1.set(w.index, false);
    }
    let threshold = if k == 0 { 0.0 } else { order[k - 1].magnitude };
    let layers = bits
        .into_iter()
        .map(|(li, b)| (model.layers[li].name.clone(), b))
        .collect();
    let mask = SparsityMask::from_layers(PruneMethod::GlobalMagnitude, None, layers);
    let report = PruneReport::from_mask(&mask, Some(threshold));
    (mask, report)
}

/// L1 score of each 1x4 block of a `(rows, cols)` row-major matrix, in
/// `(row, block)` order. Trailing partial blocks are scored over the
/// weights they have.
pub fn block_scores(weights: &[f32], rows: usize, cols: usize) -> Vec<f64> {
    let per_row = cols.div_ceil(BLOCK_WIDTH);
    let mut scores = Vec::with_capacity(rows * per_row);
    for r in 0..rows {
        let row = &weights[r * cols..(r + 1) * cols];
        for chunk in row.chunks(BLOCK_WIDTH) {
            scores.push(chunk.iter().map(|w| w.abs() as f64).sum());
        }
    }
    scores
}

/// Keep-mask of a `(rows, cols)` row-major matrix with the `round(s * B)`
/// lowest-L1 1x4 blocks removed. Equal scores go in `(row, block)` order.
pub fn block_mask(weights: &[f32], rows: usize, cols: usize, s: f64) -> Result<Bitset> {
    if weights.len() != rows * cols {
        return Err(Error::Shape(format!(
            "{} weights do not form a {rows}x{cols} matrix",
            weights.len()
        )));
    }
    let per_row = cols.div_ceil(BLOCK_WIDTH);
    let scores = block_scores(weights, rows, cols);
    let k = prune_count(s, scores.len())?;
    let mut bits = Bitset::ones(weights.len());
    for &b in ascending_order(&scores, |a, b| a.total_cmp(b)).iter().take(k) {
        let (r, blk) = (b / per_row, b % per_row);
        let start = blk * BLOCK_WIDTH;
        for c in start..(start + BLOCK_WIDTH).min(cols) {
            bits.set(r * cols + c, false);
        }
    }
    Ok(bits)
}

/// Uniform block pruning: each prunable layer, viewed as an
/// `(out_channels, cols)` matrix, is cut into 1x4 blocks along each row and
/// the `round(s * B)` lowest-L1 blocks of its `B` blocks are removed whole.
pub fn prune_block(model: &ModelGraph, s: f64) -> Result<(SparsityMask, PruneReport)> {
    prune_count(s, 0)?;
    let layers: Vec<&LayerSpec> = model.prunable_layers().collect();
    let masks = layers
        .par_iter()
        .map(|layer| {
            magnitudes(model, layer)?;
            let bits = block_mask(model.layer_weights(layer), layer.out_channels, layer.weight_cols(), s)?;
            Ok((layer.name.clone(), bits))
        })
        .collect::<Result<Vec<_>>>()?;
    let mask = SparsityMask::from_layers(PruneMethod::BlockMagnitude, Some((1, BLOCK_WIDTH)), masks);
    let report = PruneReport::from_mask(&mask, None);
    Ok((mask, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GraphBuilder, Role};

    fn with_weights(shapes: &[(usize, usize)], weights: &[f32]) -> ModelGraph {
        let mut b = GraphBuilder::new("t", shapes[0].1, 1, 1);
        b.with_bias(false);
        for (i, &(out, _)) in shapes.iter().enumerate() {
            b.pointwise(&format!("l{i}"), out, Role::Pw);
        }
        let m = b.build().unwrap();
        m.with_weights(weights.to_vec()).unwrap()
    }

    fn pruned(mask: &SparsityMask, layer: &str) -> Vec<usize> {
        mask.layer(layer).unwrap().zero_indices().collect()
    }

    #[test]
    fn uniform_half_of_eight() {
        let m = with_weights(&[(8, 1)], &[1., 2., 3., 4., 5., 6., 7., 8.]);
        let (mask, report) = prune_uniform(&m, 0.5).unwrap();
        assert_eq!(pruned(&mask, "l0"), vec![0, 1, 2, 3]);
        assert_eq!(report.layer_sparsity("l0"), Some(0.5));
    }

    #[test]
    fn uniform_boundaries() {
        let m = with_weights(&[(8, 1)], &[1., -2., 3., 4., 5., 6., 7., 8.]);
        assert_eq!(prune_uniform(&m, 0.0).unwrap().0.pruned(), 0);
        assert_eq!(prune_uniform(&m, 1.0).unwrap().0.kept(), 0);
        assert!(matches!(prune_uniform(&m, 1.01), Err(Error::InvalidSparsity(_))));
        assert!(matches!(prune_uniform(&m, -0.1), Err(Error::InvalidSparsity(_))));
    }

    #[test]
    fn global_ranks_across_layers() {
        // layer A = [10, 20] (2 outputs x 1 input), B = [1, 2, 3, 4] (2x2)
        let m = with_weights(&[(2, 1), (2, 2)], &[10., 20., 1., 2., 3., 4.]);
        let (mask, report) = prune_global(&m, 0.5).unwrap();
        assert_eq!(pruned(&mask, "l0"), Vec::<usize>::new());
        assert_eq!(pruned(&mask, "l1"), vec![0, 1, 2]);
        assert_eq!(report.threshold, Some(3.0));
    }

    #[test]
    fn global_ties_follow_layer_then_index() {
        let m = with_weights(&[(2, 1), (2, 2)], &[1.; 6]);
        let (mask, report) = prune_global(&m, 0.5).unwrap();
        assert_eq!(pruned(&mask, "l0"), vec![0, 1]);
        assert_eq!(pruned(&mask, "l1"), vec![0]);
        assert_eq!(report.threshold, Some(1.0));
        let (_, r0) = prune_global(&m, 0.0).unwrap();
        assert_eq!(r0.threshold, Some(0.0));
    }

    #[test]
    fn global_without_prunable_layers() {
        let mut b = GraphBuilder::new("t", 2, 3, 3);
        b.conv("c", 2, 3, 1, 1, Role::Other);
        let m = b.build().unwrap();
        assert!(matches!(prune_global(&m, 0.5), Err(Error::NoPrunableLayers)));
    }

    #[test]
    fn block_single_row() {
        let m = with_weights(&[(1, 8)], &[1., 1., 1., 1., 9., 9., 9., 9.]);
        let (mask, _) = prune_block(&m, 0.5).unwrap();
        assert_eq!(pruned(&mask, "l0"), vec![0, 1, 2, 3]);
        mask.check_block_aligned(&m).unwrap();
        assert_eq!(mask.block_shape, Some((1, 4)));
    }

    #[test]
    fn block_two_rows() {
        let m = with_weights(&[(2, 4)], &[1., 2., 3., 4., 5., 6., 7., 8.]);
        let (mask, _) = prune_block(&m, 0.5).unwrap();
        assert_eq!(pruned(&mask, "l0"), vec![0, 1, 2, 3]);
    }

    #[test]
    fn partial_trailing_block_is_its_own_unit() {
        // one row of 6: blocks [5,5,5,5] (score 20) and [1,1] (score 2)
        let m = with_weights(&[(1, 6)], &[5., 5., 5., 5., 1., 1.]);
        let (mask, report) = prune_block(&m, 0.5).unwrap();
        assert_eq!(pruned(&mask, "l0"), vec![4, 5]);
        assert!((report.overall_prunable_sparsity - 2.0 / 6.0).abs() < 1e-12);
        mask.check_block_aligned(&m).unwrap();
    }

    #[test]
    fn non_finite_weights_rejected() {
        let m = with_weights(&[(2, 1)], &[f32::NAN, 1.0]);
        assert!(matches!(prune_uniform(&m, 0.5), Err(Error::NonFinite(_))));
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(prune_count(0.5, 5).unwrap(), 3);
        assert_eq!(prune_count(0.3, 10).unwrap(), 3);
        assert_eq!(prune_count(0.25, 6).unwrap(), 2);
        assert_eq!(prune_count(1.0, 7).unwrap(), 7);
    }
}
