use super::bsr::BlockSparseMatrix;
use super::quant::{round_half_away, Int8Matrix, QuantParams, RequantParams};
use crate::error::{Error, Result};
use crate::prune::BLOCK_WIDTH;

/// Largest reduction length accepted by the kernels.
///
/// Each product is at most `127 * 255` in magnitude (weights in
/// `[-127, 127]`, zero-point-shifted activations in `[-255, 255]`), and
/// `127 * 255 * 2^16 < 2^31`, so `i32` accumulators cannot overflow.
pub const MAX_COLS: usize = 1 << 16;

/// `i32` accumulators of `W · X^T`, stored batch-major: `acc[b * rows + r]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GemmOutput {
    pub rows: usize,
    pub batch: usize,
    pub acc: Vec<i32>,
    /// Multiplications executed.
    pub mac_count: u64,
}

fn check_operands(rows: usize, cols: usize, x: &[i8], batch: usize, params: &QuantParams) -> Result<()> {
    if cols > MAX_COLS {
        return Err(Error::Shape(format!(
            "{cols} columns exceed the {MAX_COLS}-column accumulator bound"
        )));
    }
    if x.len() != batch * cols {
        return Err(Error::Shape(format!(
            "input has {} values, expected batch {batch} x cols {cols}",
            x.len()
        )));
    }
    if params.weight_scales.len() != rows {
        return Err(Error::Shape(format!(
            "{} weight scales for {rows} rows",
            params.weight_scales.len()
        )));
    }
    Ok(())
}

/// Block-sparse int8 GEMM. `x` holds `batch` rows of `cols` quantized
/// activations; each output is `Σ w * (x - act_zero_point)` over the stored
/// blocks. Every stored block costs four multiplications per batch row,
/// padded lanes included.
pub fn spmm(bsm: &BlockSparseMatrix, x: &[i8], batch: usize, params: &QuantParams) -> Result<GemmOutput> {
    check_operands(bsm.rows, bsm.cols, x, batch, params)?;
    let zp = params.act_zero_point;
    let cols = bsm.cols;
    let full_blocks = cols / BLOCK_WIDTH;
    let mut acc = vec![0i32; batch * bsm.rows];
    let mut xs = vec![0i32; cols.div_ceil(BLOCK_WIDTH) * BLOCK_WIDTH];
    let mut mac_count = 0u64;
    for b in 0..batch {
        // Shift once per input row; padded lanes stay 0.
        for (dst, &src) in xs.iter_mut().zip(&x[b * cols..(b + 1) * cols]) {
            *dst = src as i32 - zp;
        }
        let out = &mut acc[b * bsm.rows..(b + 1) * bsm.rows];
        for (r, slot) in out.iter_mut().enumerate() {
            let (lo, hi) = (bsm.row_ptr[r], bsm.row_ptr[r + 1]);
            let mut sum = 0i32;
            for i in lo..hi {
                let c = bsm.block_cols[i] as usize;
                debug_assert!(c <= full_blocks);
                let v = &bsm.values[i];
                let xv = &xs[c * BLOCK_WIDTH..c * BLOCK_WIDTH + BLOCK_WIDTH];
                sum += v[0] as i32 * xv[0] + v[1] as i32 * xv[1] + v[2] as i32 * xv[2] + v[3] as i32 * xv[3];
            }
            *slot = sum;
            mac_count += ((hi - lo) * BLOCK_WIDTH) as u64;
        }
    }
    Ok(GemmOutput {
        rows: bsm.rows,
        batch,
        acc,
        mac_count,
    })
}

/// Dense int8 reference GEMM with the same conventions as [`spmm`].
pub fn dense_gemm(q: &Int8Matrix, x: &[i8], batch: usize, params: &QuantParams) -> Result<GemmOutput> {
    check_operands(q.rows, q.cols, x, batch, params)?;
    let zp = params.act_zero_point;
    let mut acc = vec![0i32; batch * q.rows];
    for b in 0..batch {
        let xb = &x[b * q.cols..(b + 1) * q.cols];
        for r in 0..q.rows {
            acc[b * q.rows + r] = q
                .row(r)
                .iter()
                .zip(xb)
                .map(|(&w, &a)| w as i32 * (a as i32 - zp))
                .sum();
        }
    }
    Ok(GemmOutput {
        rows: q.rows,
        batch,
        acc,
        mac_count: (q.rows * q.cols * batch) as u64,
    })
}

/// Converts accumulators to int8 outputs:
/// `clamp(round(acc * w_scale[r] * act_scale / out.scale) + out.zero_point)`
/// with halves rounded away from zero.
pub fn requantize(out: &GemmOutput, params: &QuantParams, requant: RequantParams) -> Result<Vec<i8>> {
    if params.weight_scales.len() != out.rows {
        return Err(Error::Shape(format!(
            "{} weight scales for {} rows",
            params.weight_scales.len(),
            out.rows
        )));
    }
    Ok(out
        .acc
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let r = i % out.rows;
            let real = a as f64 * params.weight_scales[r] as f64 * params.act_scale as f64;
            let q = round_half_away(real / requant.scale as f64) + requant.zero_point as f64;
            q.clamp(-128.0, 127.0) as i8
        })
        .collect())
}

/// Reorders an `(n, c, h, w)` tensor into `n * h * w` rows of `c` values,
/// so that a pointwise convolution becomes a GEMM over rows.
pub fn nchw_to_rows<T: Copy>(x: &[T], n: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = Vec::with_capacity(x.len());
    for b in 0..n {
        for p in 0..hw {
            for ch in 0..c {
                out.push(x[(b * c + ch) * hw + p]);
            }
        }
    }
    out
}

/// Inverse of [`nchw_to_rows`].
pub fn rows_to_nchw<T: Copy + Default>(rows: &[T], n: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::default(); rows.len()];
    for b in 0..n {
        for p in 0..hw {
            for ch in 0..c {
                out[(b * c + ch) * hw + p] = rows[(b * hw + p) * c + ch];
            }
        }
    }
    out
}

/// Quantized pointwise convolution evaluated directly on an `(n, c, h, w)`
/// int8 tensor. Output is `(n, out_channels, h, w)` accumulators.
pub fn quantized_conv1x1_reference(
    q: &Int8Matrix,
    x: &[i8],
    n: usize,
    h: usize,
    w: usize,
    act_zero_point: i32,
) -> Result<Vec<i32>> {
    let (cout, cin, hw) = (q.rows, q.cols, h * w);
    if x.len() != n * cin * hw {
        return Err(Error::Shape(format!("input has {} values, expected {}", x.len(), n * cin * hw)));
    }
    let mut out = vec![0i32; n * cout * hw];
    for b in 0..n {
        for o in 0..cout {
            for p in 0..hw {
                let mut sum = 0i32;
                for i in 0..cin {
                    sum += q.data[o * cin + i] as i32 * (x[(b * cin + i) * hw + p] as i32 - act_zero_point);
                }
                out[(b * cout + o) * hw + p] = sum;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prune::Bitset;
    use crate::sparse::to_block_sparse;

    fn params(rows: usize, zp: i32) -> QuantParams {
        QuantParams {
            weight_scales: vec![0.5; rows],
            weight_zero_point: 0,
            act_scale: 0.25,
            act_zero_point: zp,
        }
    }

    #[test]
    fn single_kept_block_matches_dense() {
        let q = Int8Matrix::new(4, 4, (0..16).map(|i| if i % 5 == 0 { 1 } else { 0 }).collect()).unwrap();
        let mut mask = Bitset::zeros(16);
        for c in 4..8 {
            mask.set(c, true);
        }
        let bsm = to_block_sparse(&q, &mask).unwrap();
        let x: Vec<i8> = vec![3, -4, 5, 7, 1, 2, 3, 4];
        let p = params(4, 2);
        let sparse = spmm(&bsm, &x, 2, &p).unwrap();
        let dense = dense_gemm(&q.masked(&mask).unwrap(), &x, 2, &p).unwrap();
        assert_eq!(sparse.acc, dense.acc);
        assert_eq!(sparse.mac_count, 4 * 2);
        assert_eq!(dense.mac_count, 32);
    }

    #[test]
    fn empty_matrix_gives_zeros() {
        let q = Int8Matrix::new(3, 5, vec![9; 15]).unwrap();
        let bsm = to_block_sparse(&q, &Bitset::zeros(15)).unwrap();
        let out = spmm(&bsm, &[1; 10], 2, &params(3, 0)).unwrap();
        assert_eq!(out.acc, vec![0; 6]);
        assert_eq!(out.mac_count, 0);
    }

    #[test]
    fn oversized_reduction_rejected() {
        let q = Int8Matrix::zeros(1, MAX_COLS + 1);
        let err = dense_gemm(&q, &vec![0; MAX_COLS + 1], 1, &params(1, 0)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn extreme_values_do_not_overflow() {
        let cols = MAX_COLS;
        let q = Int8Matrix::new(1, cols, vec![-127; cols]).unwrap();
        let x = vec![-128i8; cols];
        let out = dense_gemm(&q, &x, 1, &params(1, 127)).unwrap();
        assert_eq!(out.acc[0] as i64, 127 * 255 * cols as i64);
        let bsm = to_block_sparse(&q, &Bitset::ones(cols)).unwrap();
        assert_eq!(spmm(&bsm, &x, 1, &params(1, 127)).unwrap().acc, out.acc);
    }

    #[test]
    fn requantize_rounds_half_away() {
        let out = GemmOutput {
            rows: 1,
            batch: 3,
            acc: vec![5, -5, 10_000],
            mac_count: 0,
        };
        // real = acc * 0.5 * 0.25 = acc / 8; out scale 0.25 -> acc / 2
        let q = requantize(&out, &params(1, 0), RequantParams { scale: 0.25, zero_point: 1 }).unwrap();
        assert_eq!(q, vec![4, -2, 127]);
    }

    #[test]
    fn layout_round_trip() {
        let x: Vec<i32> = (0..2 * 3 * 2 * 2).collect();
        let rows = nchw_to_rows(&x, 2, 3, 2, 2);
        assert_eq!(&rows[..3], &[0, 4, 8]);
        assert_eq!(rows_to_nchw(&rows, 2, 3, 2, 2), x);
    }
}
