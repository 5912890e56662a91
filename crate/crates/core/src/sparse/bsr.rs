use super::quant::Int8Matrix;
use crate::error::{Error, Result};
use crate::prune::{Bitset, BLOCK_WIDTH};

/// Block-compressed-row storage of an int8 matrix with 1x4 blocks.
///
/// Row `r` owns blocks `row_ptr[r]..row_ptr[r + 1]`; block `i` starts at
/// column `4 * block_cols[i]` and holds four values. Lanes of a trailing
/// partial block that fall past `cols` are stored as zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub block_cols: Vec<u32>,
    pub values: Vec<[i8; BLOCK_WIDTH]>,
}

impl BlockSparseMatrix {
    /// Stores exactly the blocks the mask keeps. Fails if any block is only
    /// partly kept.
    pub fn from_masked(q: &Int8Matrix, mask: &Bitset) -> Result<Self> {
        if mask.len() != q.rows * q.cols {
            return Err(Error::Shape(format!(
                "mask of {} bits for a {}x{} matrix",
                mask.len(),
                q.rows,
                q.cols
            )));
        }
        let mut row_ptr = Vec::with_capacity(q.rows + 1);
        let mut block_cols = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in 0..q.rows {
            let row = q.row(r);
            for (b, start) in (0..q.cols).step_by(BLOCK_WIDTH).enumerate() {
                let end = (start + BLOCK_WIDTH).min(q.cols);
                let kept = mask.get(r * q.cols + start);
                if (start..end).any(|c| mask.get(r * q.cols + c) != kept) {
                    return Err(Error::BlockAlignment {
                        layer: "<matrix>".into(),
                        row: r,
                        block: b,
                    });
                }
                if kept {
                    let mut block = [0i8; BLOCK_WIDTH];
                    block[..end - start].copy_from_slice(&row[start..end]);
                    block_cols.push(b as u32);
                    values.push(block);
                }
            }
            row_ptr.push(block_cols.len());
        }
        Ok(BlockSparseMatrix {
            rows: q.rows,
            cols: q.cols,
            row_ptr,
            block_cols,
            values,
        })
    }

    pub fn kept_blocks(&self) -> usize {
        self.values.len()
    }

    pub fn total_blocks(&self) -> usize {
        self.rows * self.cols.div_ceil(BLOCK_WIDTH)
    }

    /// Fraction of blocks not stored.
    pub fn block_sparsity(&self) -> f64 {
        let total = self.total_blocks();
        if total == 0 {
            0.0
        } else {
            1.0 - self.kept_blocks() as f64 / total as f64
        }
    }

    pub fn to_dense(&self) -> Int8Matrix {
        let mut out = Int8Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                let start = self.block_cols[i] as usize * BLOCK_WIDTH;
                let end = (start + BLOCK_WIDTH).min(self.cols);
                out.data[r * self.cols + start..r * self.cols + end].copy_from_slice(&self.values[i][..end - start]);
            }
        }
        out
    }
}

/// Convenience alias matching the quantize → compress pipeline.
pub fn to_block_sparse(q: &Int8Matrix, mask: &Bitset) -> Result<BlockSparseMatrix> {
    BlockSparseMatrix::from_masked(q, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix() -> Int8Matrix {
        Int8Matrix::new(2, 6, (1..=12).map(|v| v as i8).collect()).unwrap()
    }

    #[test]
    fn dense_mask_stores_every_block() {
        let q = matrix();
        let b = to_block_sparse(&q, &Bitset::ones(12)).unwrap();
        assert_eq!(b.kept_blocks(), 4);
        assert_eq!(b.row_ptr, vec![0, 2, 4]);
        assert_eq!(b.values[1], [5, 6, 0, 0]);
        assert_eq!(b.to_dense(), q);
    }

    #[test]
    fn fully_pruned_has_empty_rows() {
        let b = to_block_sparse(&matrix(), &Bitset::zeros(12)).unwrap();
        assert_eq!(b.kept_blocks(), 0);
        assert_eq!(b.row_ptr, vec![0, 0, 0]);
        assert_eq!(b.to_dense(), Int8Matrix::zeros(2, 6));
        assert_eq!(b.block_sparsity(), 1.0);
    }

    #[test]
    fn split_block_rejected() {
        let mut mask = Bitset::ones(12);
        mask.set(7, false);
        let err = to_block_sparse(&matrix(), &mask).unwrap_err();
        assert!(matches!(err, Error::BlockAlignment { row: 1, block: 0, .. }), "{err}");
    }

    #[test]
    fn block_columns_increase() {
        let mut mask = Bitset::ones(12);
        for c in 0..4 {
            mask.set(c, false);
        }
        let b = to_block_sparse(&matrix(), &mask).unwrap();
        assert_eq!(b.block_cols, vec![1, 0, 1]);
        assert_eq!(b.to_dense(), matrix().masked(&mask).unwrap());
    }
}
