//! Symmetric per-row INT8 post-training quantization of weights.
//!
//! Scale per row is `max|w| / 127`; values round half away from zero and
//! clamp to [-127, 127]. Exact zeros map to 0, so pruning done before
//! quantization survives it. Quantize-then-prune is not supported.

use crate::error::Result;
use crate::sparse::{compress, BitmaskCompressed, ValueWidth};
use crate::tensor::DenseMatrix;

pub const QMAX: f32 = 127.0;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    values: Vec<i8>,
    scales: Vec<f32>,
}

impl QuantizedMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }
}

/// `max|v| / 127`, or 0 for an all-zero (or empty) row.
pub fn row_scale(row: &[f32]) -> f32 {
    let max = row.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    max / QMAX
}

#[inline]
pub fn quantize_value(w: f32, scale: f32) -> i8 {
    if scale == 0.0 {
        return 0;
    }
    // f64 keeps the division exact enough that the half-scale bound is not
    // lost to an extra f32 rounding.
    let q = (w as f64 / scale as f64).round();
    q.clamp(-(QMAX as f64), QMAX as f64) as i8
}

#[inline]
pub fn dequantize_value(q: i8, scale: f32) -> f32 {
    q as f32 * scale
}

pub fn quantize_int8(w: &DenseMatrix) -> QuantizedMatrix {
    let mut values = Vec::with_capacity(w.len());
    let mut scales = Vec::with_capacity(w.rows());
    for r in 0..w.rows() {
        let row = w.row(r);
        let s = row_scale(row);
        scales.push(s);
        values.extend(row.iter().map(|&v| quantize_value(v, s)));
    }
    QuantizedMatrix {
        rows: w.rows(),
        cols: w.cols(),
        values,
        scales,
    }
}

pub fn dequantize(q: &QuantizedMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(q.rows, q.cols);
    for r in 0..q.rows {
        let s = q.scales[r];
        for (o, &v) in out.row_mut(r).iter_mut().zip(&q.values[r * q.cols..(r + 1) * q.cols]) {
            *o = dequantize_value(v, s);
        }
    }
    out
}

/// Simulated INT8 weights: quantize then dequantize.
pub fn fake_quantize(w: &DenseMatrix) -> DenseMatrix {
    dequantize(&quantize_int8(w))
}

/// Prune-then-quantize storage: INT8 payload with per-row scales in the
/// bitmask container. The mask is taken from the exact zeros of `w`.
pub fn sparse_quant_compress(w: &DenseMatrix) -> BitmaskCompressed {
    compress(w, ValueWidth::Int8)
}

/// Bits per weight of the INT8 bitmask format, excluding per-row scales.
pub fn sparse_int8_bits_per_weight(c: &BitmaskCompressed) -> Result<f64> {
    crate::sparse::bits_per_weight(8, c.density())
}

/// Per-row scale storage amortized over every weight position, in bits.
pub fn scale_overhead_bits(rows: usize, cols: usize) -> f64 {
    if rows * cols == 0 {
        0.0
    } else {
        32.0 * rows as f64 / (rows * cols) as f64
    }
}
