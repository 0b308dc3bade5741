use serde::Serialize;

use super::ValueWidth;
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Storage cost per weight position of the bitmask format: one mask bit plus
/// `value_bits` for every stored nonzero.
pub fn bits_per_weight(value_bits: u32, density: f64) -> Result<f64> {
    if !matches!(value_bits, 8 | 16 | 32) {
        return Err(Error::invalid(format!("value_bits must be 8, 16 or 32, got {value_bits}")));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::invalid(format!("density {density} outside [0, 1]")));
    }
    Ok(1.0 + value_bits as f64 * density)
}

/// Memory-bound speedup bound: dense bits over compressed bits per weight.
pub fn theoretical_speedup(dense_bits: u32, value_bits: u32, density: f64) -> Result<f64> {
    if dense_bits == 0 {
        return Err(Error::invalid("dense_bits must be positive"));
    }
    Ok(dense_bits as f64 / bits_per_weight(value_bits, density)?)
}

pub fn compression_ratio_to_sparsity(ratio: f64) -> Result<f64> {
    if !(ratio >= 1.0) || !ratio.is_finite() {
        return Err(Error::invalid(format!("compression ratio {ratio} must be finite and >= 1")));
    }
    Ok(1.0 - 1.0 / ratio)
}

pub fn sparsity_to_compression_ratio(sparsity: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::invalid(format!("sparsity {sparsity} must lie in [0, 1)")));
    }
    Ok(1.0 / (1.0 - sparsity))
}

/// Integer percent, rounding halves up.
pub fn round_percent(fraction: f64) -> u32 {
    (fraction * 100.0 + 0.5).floor() as u32
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityStats {
    pub rows: usize,
    pub cols: usize,
    pub value_width: ValueWidth,
    pub sparsity: f64,
    pub nnz: usize,
    pub bits_per_weight: f64,
    /// Against a dense matrix stored at the same value width.
    pub theoretical_speedup: f64,
}

pub fn sparsity_of(w: &DenseMatrix, width: ValueWidth) -> SparsityStats {
    let total = w.len();
    let nnz = total - w.count_zeros();
    let density = if total == 0 { 0.0 } else { nnz as f64 / total as f64 };
    let bits = width.bits();
    let bpw = bits_per_weight(bits, density).expect("density in range");
    SparsityStats {
        rows: w.rows(),
        cols: w.cols(),
        value_width: width,
        sparsity: if total == 0 { 0.0 } else { 1.0 - density },
        nnz,
        bits_per_weight: bpw,
        theoretical_speedup: bits as f64 / bpw,
    }
}
