//! Fixtures shared by the benchmarks.

use prunekit::prune::block_mask;
use prunekit::sparse::{quantize_activations, quantize_layer, to_block_sparse, BlockSparseMatrix, Int8Matrix, QuantParams};

/// A quantized `rows x cols` layer, its 1x4 block-sparse form at sparsity
/// `s` and an int8 activation batch.
pub struct KernelFixture {
    pub dense: Int8Matrix,
    pub sparse: BlockSparseMatrix,
    pub params: QuantParams,
    pub x: Vec<i8>,
    pub batch: usize,
}

/// Deterministic pseudo-random values in [-1, 1).
fn values(n: usize, seed: u64) -> Vec<f32> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 40) as f32 / (1u64 << 23) as f32 - 1.0
        })
        .collect()
}

pub fn kernel_fixture(rows: usize, cols: usize, batch: usize, s: f64) -> KernelFixture {
    let w = values(rows * cols, 1);
    let acts = values(batch * cols, 2);
    let mask = block_mask(&w, rows, cols, s).expect("valid shape");
    let (dense, params) = quantize_layer(&w, rows, cols, &acts).expect("valid layer");
    let x = quantize_activations(&acts, params.act()).expect("finite activations");
    let sparse = to_block_sparse(&dense, &mask).expect("matching mask");
    KernelFixture { dense, sparse, params, x, batch }
}
