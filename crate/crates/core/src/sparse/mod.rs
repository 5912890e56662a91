//! Int8 block-sparse inference for pruned pointwise layers.
//!
//! Weights are quantized symmetrically per output row, activations affinely
//! per tensor, and products accumulate in `i32`. Kept 1x4 blocks are stored
//! in a block-compressed-row layout and multiplied by [`spmm`]; [`dense_gemm`]
//! is the integer reference it must match bit for bit.

mod bench;
mod bsr;
mod kernel;
mod quant;

pub use bench::{benchmark, median_and_mad, BenchKernel, LatencyStats, CSV_HEADER};
pub use bsr::{to_block_sparse, BlockSparseMatrix};
pub use kernel::{
    dense_gemm, nchw_to_rows, quantized_conv1x1_reference, requantize, rows_to_nchw, spmm, GemmOutput, MAX_COLS,
};
pub use quant::{
    quantize_activations, quantize_layer, round_half_away, ActParams, Int8Matrix, QuantParams, RequantParams,
};

/// Block sparsity levels below which sparse kernels rarely pay off.
pub const SPARSITY_PRESETS: [f64; 3] = [0.4, 0.5, 0.6];
