use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prune::Bitset;

/// Row-major `i8` matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Int8Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i8>,
}

impl Int8Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Int8Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Int8Matrix {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[i8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Elementwise product with a keep-mask.
    pub fn masked(&self, mask: &Bitset) -> Result<Int8Matrix> {
        if mask.len() != self.data.len() {
            return Err(Error::Shape(format!(
                "mask of {} bits for {} values",
                mask.len(),
                self.data.len()
            )));
        }
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| if mask.get(i) { v } else { 0 })
            .collect();
        Ok(Int8Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }
}

/// Affine per-tensor activation quantization: `q = round(x / scale) + zero_point`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActParams {
    pub scale: f32,
    pub zero_point: i32,
}

impl ActParams {
    /// Maps `[min(lo, 0), max(hi, 0)]` onto `[-128, 127]`.
    pub fn from_range(lo: f32, hi: f32) -> Self {
        let lo = lo.min(0.0);
        let hi = hi.max(0.0);
        let span = hi - lo;
        if span <= 0.0 {
            return ActParams {
                scale: 1.0,
                zero_point: 0,
            };
        }
        let scale = span / 255.0;
        let zero_point = (round_half_away(-128.0 - lo as f64 / scale as f64) as i32).clamp(-128, 127);
        ActParams { scale, zero_point }
    }
}

/// Quantization parameters of one int8 linear layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    /// One positive scale per output row.
    pub weight_scales: Vec<f32>,
    /// Always 0: weights are symmetric.
    pub weight_zero_point: i32,
    pub act_scale: f32,
    pub act_zero_point: i32,
}

impl QuantParams {
    pub fn act(&self) -> ActParams {
        ActParams {
            scale: self.act_scale,
            zero_point: self.act_zero_point,
        }
    }
}

/// Output quantization used when requantizing `i32` accumulators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequantParams {
    pub scale: f32,
    pub zero_point: i32,
}

/// Rounds to nearest, halves away from zero.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Quantizes a `(rows, cols)` weight matrix per row with
/// `scale = max|w| / 127` (1 for an all-zero row) and
/// `q = clamp(round(w / scale), -127, 127)`, and derives activation
/// parameters from the sample's range.
pub fn quantize_layer(weights: &[f32], rows: usize, cols: usize, activations_sample: &[f32]) -> Result<(Int8Matrix, QuantParams)> {
    if rows == 0 || cols == 0 {
        return Err(Error::Shape("cannot quantize an empty matrix".into()));
    }
    if weights.len() != rows * cols {
        return Err(Error::Shape(format!("{} weights for a {rows}x{cols} matrix", weights.len())));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("weights to quantize".into()));
    }
    if activations_sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("activation sample".into()));
    }
    let mut data = Vec::with_capacity(weights.len());
    let mut scales = Vec::with_capacity(rows);
    for row in weights.chunks_exact(cols) {
        let max_abs = row.iter().fold(0.0f32, |m, w| m.max(w.abs()));
        if max_abs == 0.0 {
            scales.push(1.0);
            data.extend(std::iter::repeat_n(0i8, cols));
            continue;
        }
        scales.push(max_abs / 127.0);
        // w / (max/127) computed as w * 127 / max keeps exact halves exact.
        data.extend(
            row.iter()
                .map(|&w| round_half_away(w as f64 * 127.0 / max_abs as f64).clamp(-127.0, 127.0) as i8),
        );
    }
    let (lo, hi) = activations_sample
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let act = if activations_sample.is_empty() {
        ActParams {
            scale: 1.0,
            zero_point: 0,
        }
    } else {
        ActParams::from_range(lo, hi)
    };
    Ok((
        Int8Matrix { rows, cols, data },
        QuantParams {
            weight_scales: scales,
            weight_zero_point: 0,
            act_scale: act.scale,
            act_zero_point: act.zero_point,
        },
    ))
}

/// `clamp(round(x / scale) + zero_point, -128, 127)`.
pub fn quantize_activations(x: &[f32], act: ActParams) -> Result<Vec<i8>> {
    x.iter()
        .map(|&v| {
            if !v.is_finite() {
                return Err(Error::NonFinite("activations".into()));
            }
            let q = round_half_away(v as f64 / act.scale as f64) + act.zero_point as f64;
            Ok(q.clamp(-128.0, 127.0) as i8)
        })
        .collect()
}
