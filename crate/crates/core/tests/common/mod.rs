//! Seeded model generators and brute-force oracles shared by the
//! integration tests. Nothing here calls into the pruning code under test.

#![allow(dead_code)]

use std::collections::BTreeSet;

use prunekit::model::GraphBuilder;
use prunekit::{ModelGraph, Role};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random chain of pointwise convolutions, some strided, with depthwise
/// layers and a linear head mixed in. About a third of the models get
/// their weights snapped to a coarse grid so that magnitude ties are common.
pub fn random_model(seed: u64, max_prunable: usize) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, hw) = (rng.random_range(1..=8), rng.random_range(1..=12));
    let mut b = GraphBuilder::new(format!("rand{seed}"), c, hw, hw);
    b.with_bias(rng.random_bool(0.5));
    let layers = rng.random_range(1..=6);
    let mut prunable = 0;
    for i in 0..layers {
        let (cin, _, _) = b.current_shape();
        let out = rng.random_range(1..=48);
        if prunable + cin * out > max_prunable {
            break;
        }
        prunable += cin * out;
        let stride = if rng.random_bool(0.3) { 2 } else { 1 };
        let role = [Role::Pw, Role::Pwl, Role::Se][rng.random_range(0..3)];
        b.conv(&format!("pw{i}"), out, 1, stride, 1, role);
        if rng.random_bool(0.3) {
            b.depthwise(&format!("dw{i}"), 3, 1);
        }
        if rng.random_bool(0.5) {
            b.relu(&format!("relu{i}"));
        }
    }
    b.global_avg_pool("gap").linear("head", rng.random_range(2..=5), rng.random_bool(0.5));
    let mut model = b.build_random(seed ^ 0x5eed).expect("generated model is valid");
    if seed.is_multiple_of(3) {
        let w: Vec<f32> = model.weights.iter().map(|w| (w * 4.0).round() / 4.0).collect();
        model = model.with_weights(w).unwrap();
    }
    model
}

/// `round(s * n)` with halves up, computed independently of the library.
pub fn count(s: f64, n: usize) -> usize {
    ((s * n as f64).round() as usize).min(n)
}

/// Pruned `(layer index, flat index)` pairs for uniform pruning.
pub fn uniform_oracle(model: &ModelGraph, s: f64) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (li, layer) in model.layers.iter().enumerate().filter(|(_, l)| l.prunable) {
        let w = model.layer_weights(layer);
        let mut keys: Vec<(f32, usize)> = w.iter().enumerate().map(|(i, v)| (v.abs(), i)).collect();
        keys.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        out.extend(keys.iter().take(count(s, w.len())).map(|&(_, i)| (li, i)));
    }
    out
}

/// All prunable weights in `(|w|, layer, index)` order.
pub fn global_oracle_order(model: &ModelGraph) -> Vec<(f32, usize, usize)> {
    let mut keys = Vec::new();
    for (li, layer) in model.layers.iter().enumerate().filter(|(_, l)| l.prunable) {
        for (i, v) in model.layer_weights(layer).iter().enumerate() {
            keys.push((v.abs(), li, i));
        }
    }
    keys.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));
    keys
}

pub fn global_oracle(model: &ModelGraph, s: f64) -> BTreeSet<(usize, usize)> {
    let order = global_oracle_order(model);
    let k = count(s, order.len());
    order[..k].iter().map(|&(_, l, i)| (l, i)).collect()
}

/// Pruned weights for 1x4 block pruning: blocks scored by the L1 norm in
/// `f64`, lowest `round(s * B)` removed, ties by `(row, block)`.
pub fn block_oracle(model: &ModelGraph, s: f64) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (li, layer) in model.layers.iter().enumerate().filter(|(_, l)| l.prunable) {
        let w = model.layer_weights(layer);
        let cols = w.len() / layer.out_channels;
        let mut blocks = Vec::new();
        for r in 0..layer.out_channels {
            let mut start = 0;
            while start < cols {
                let end = (start + 4).min(cols);
                let score: f64 = (start..end).map(|c| w[r * cols + c].abs() as f64).sum();
                blocks.push((score, r, start, end));
                start = end;
            }
        }
        blocks.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));
        for &(_, r, start, end) in blocks.iter().take(count(s, blocks.len())) {
            out.extend((start..end).map(|c| (li, r * cols + c)));
        }
    }
    out
}

/// Pruned `(layer index, flat index)` pairs of a mask.
pub fn pruned_set(model: &ModelGraph, mask: &prunekit::SparsityMask) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (name, bits) in mask.layers() {
        let li = model.layer_index(name).unwrap();
        out.extend((0..bits.len()).filter(|&i| !bits.get(i)).map(|i| (li, i)));
    }
    out
}

/// MACs of one layer counted by walking every output position and every
/// weight it touches.
pub fn brute_layer_macs(model: &ModelGraph, li: usize) -> u64 {
    let l = &model.layers[li];
    if l.weight_len == 0 {
        return 0;
    }
    let oh = l.input_h.div_ceil(l.stride);
    let ow = l.input_w.div_ceil(l.stride);
    let mut macs = 0u64;
    for _y in 0..oh {
        for _x in 0..ow {
            macs += l.weight_len as u64;
        }
    }
    macs
}

/// Global solve by scanning the oracle order one weight at a time.
pub fn brute_global_solve(model: &ModelGraph, target_macs: u64) -> Option<(usize, u64)> {
    let mut total: u64 = (0..model.layers.len()).map(|i| brute_layer_macs(model, i)).sum();
    let order = global_oracle_order(model);
    let mut k = 0;
    while total > target_macs {
        let &(_, li, _) = order.get(k)?;
        let l = &model.layers[li];
        total -= brute_layer_macs(model, li) / l.weight_len as u64;
        k += 1;
    }
    Some((k, total))
}

/// Linear-interpolation quantile computed from scratch.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = p * (v.len() - 1) as f64;
    let i = pos as usize;
    if i + 1 >= v.len() {
        return v[v.len() - 1];
    }
    v[i] * (1.0 - (pos - i as f64)) + v[i + 1] * (pos - i as f64)
}

/// One randomized kernel case: a block-pruned quantized matrix, its
/// block-sparse form and a quantized input batch.
pub struct KernelCase {
    pub q: prunekit::sparse::Int8Matrix,
    pub mask: prunekit::prune::Bitset,
    pub bsm: prunekit::sparse::BlockSparseMatrix,
    pub params: prunekit::sparse::QuantParams,
    pub x: Vec<i8>,
    pub batch: usize,
    pub sparsity: f64,
}

pub fn kernel_case(seed: u64) -> KernelCase {
    use prunekit::prune::block_mask;
    use prunekit::sparse::{quantize_activations, quantize_layer, to_block_sparse};
    use rand_distr::{Distribution, Normal};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.random_range(1..=48);
    let cols = rng.random_range(1..=80);
    let batch = rng.random_range(1..=6);
    let sparsity = match seed % 6 {
        0 => 0.0,
        1 => 0.4,
        2 => 0.5,
        3 => 0.6,
        4 => 1.0,
        _ => rng.random_range(0.0..1.0),
    };
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let w: Vec<f32> = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
    let acts: Vec<f32> = (0..batch * cols).map(|_| normal.sample(&mut rng) + rng.random_range(-1.0..1.0f32)).collect();
    let mask = block_mask(&w, rows, cols, sparsity).unwrap();
    let (q, params) = quantize_layer(&w, rows, cols, &acts).unwrap();
    let x = quantize_activations(&acts, params.act()).unwrap();
    let bsm = to_block_sparse(&q, &mask).unwrap();
    KernelCase { q, mask, bsm, params, x, batch, sparsity }
}

/// `acc[b * rows + r] = Σ_c (q ⊙ mask)[r, c] * (x[b, c] - zp)` in `i64`.
pub fn dense_oracle(case: &KernelCase) -> Vec<i64> {
    let (rows, cols) = (case.q.rows, case.q.cols);
    let zp = case.params.act_zero_point as i64;
    let mut out = vec![0i64; rows * case.batch];
    for b in 0..case.batch {
        for r in 0..rows {
            out[b * rows + r] = (0..cols)
                .filter(|&c| case.mask.get(r * cols + c))
                .map(|c| case.q.data[r * cols + c] as i64 * (case.x[b * cols + c] as i64 - zp))
                .sum();
        }
    }
    out
}

/// Small composed networks that together use every supported op.
pub fn gradcheck_nets() -> Vec<ModelGraph> {
    let mut nets = Vec::new();

    let mut a = GraphBuilder::new("residual", 2, 5, 5);
    a.with_bias(true)
        .conv("stem", 3, 3, 2, 1, Role::Other)
        .relu("stem_relu")
        .depthwise("dw", 3, 1)
        .pointwise("pw", 3, Role::Pwl)
        .add("add", "stem_relu", "pw")
        .global_avg_pool("gap")
        .linear("fc", 4, false);
    nets.push(a.build_random(1).unwrap());

    let mut b = GraphBuilder::new("flat", 2, 3, 3);
    b.with_bias(true).pointwise("pw", 4, Role::Pw).relu("r").flatten("flat").linear("fc", 3, false);
    nets.push(b.build_random(2).unwrap());

    let mut c = GraphBuilder::new("spatial_linear", 3, 2, 2);
    c.linear("lin", 5, true).relu("r").conv("grouped", 4, 1, 1, 1, Role::Se).global_avg_pool("gap").flatten("flat").linear("fc", 3, false);
    nets.push(c.build_random(3).unwrap());

    let mut d = GraphBuilder::new("grouped", 4, 4, 4);
    d.conv("g", 6, 3, 1, 2, Role::Other).relu("r").conv("s", 4, 1, 2, 1, Role::Pw).global_avg_pool("gap").linear("fc", 2, false);
    nets.push(d.build_random(4).unwrap());

    for n in &nets {
        assert!(n.weights.len() <= 1000, "{} has {} parameters", n.name, n.weights.len());
    }
    nets
}

/// Smallest `|x|` over every ReLU input.
fn relu_margin(net: &prunekit::train::Network, model: &ModelGraph, w: &[f64], input: &[f64], batch: usize) -> f64 {
    let cache = prunekit::train::forward(net, model, w, input, batch).unwrap();
    let mut margin = f64::INFINITY;
    for (i, layer) in model.layers.iter().enumerate() {
        if layer.op_kind != prunekit::OpKind::Relu {
            continue;
        }
        let src = &model.resolved_inputs(i)[0];
        let x = match model.layer_index(src) {
            Some(j) => cache.output(j),
            None => input,
        };
        margin = x.iter().fold(margin, |m, v| m.min(v.abs()));
    }
    margin
}

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` over all
/// parameters, central differences with step `h`.
///
/// ReLU is not differentiable at 0 and a difference quotient straddling the
/// kink measures the jump, not the gradient. Probe points are therefore
/// redrawn until every ReLU input is at least `20 h` away from 0.
pub fn max_gradient_error(model: &ModelGraph, seed: u64, h: f64) -> f64 {
    let net = prunekit::train::Network::new(model).unwrap();
    let (c, hh, ww) = net.input_shape();
    let batch = 3;
    let classes = net.classes().unwrap();
    let labels: Vec<u32> = (0..batch).map(|i| (i % classes) as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (input, mut w) = loop {
        let input: Vec<f64> = (0..batch * c * hh * ww).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut w: Vec<f64> = model.weights.iter().map(|&v| v as f64).collect();
        // Non-zero biases so every bias gradient is exercised.
        for layer in &model.layers {
            for b in &mut w[layer.bias_range()] {
                *b = rng.random_range(-0.2..0.2);
            }
        }
        if relu_margin(&net, model, &w, &input, batch) > 20.0 * h {
            break (input, w);
        }
    };
    let analytic = prunekit::train::loss_and_gradients(&net, model, &w, &input, &labels).unwrap().flat;
    let mut worst = 0.0f64;
    for i in 0..w.len() {
        let orig = w[i];
        w[i] = orig + h;
        let up = prunekit::train::loss(&net, model, &w, &input, &labels).unwrap();
        w[i] = orig - h;
        let down = prunekit::train::loss(&net, model, &w, &input, &labels).unwrap();
        w[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale > 0.0 {
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        }
    }
    worst
}
