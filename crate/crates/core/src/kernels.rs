//! Matrix-vector kernels over bitmask-compressed weights.
//!
//! Each row walks its mask words; set bits are visited with trailing-zero
//! counts and index the packed values in order. Accumulation is a single
//! FP32 running sum in ascending column order, the same order as
//! [`dense_matvec`](crate::tensor::dense_matvec), so a fully dense matrix
//! gives bit-identical results and tiling never changes the output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::sparse::{words_per_row, BitmaskCompressed, Payload, ValueWidth};
use crate::tensor::Vector;

#[inline(always)]
fn row_dot<F: Fn(usize) -> f32>(words: &[u32], x: &[f32], mut k: usize, value: F) -> f32 {
    let mut acc = 0.0f32;
    for (wi, &word) in words.iter().enumerate() {
        let base = wi * 32;
        if word == u32::MAX {
            let xs = &x[base..base + 32];
            for (b, xv) in xs.iter().enumerate() {
                acc += value(k + b) * xv;
            }
            k += 32;
            continue;
        }
        let mut bits = word;
        while bits != 0 {
            let j = base + bits.trailing_zeros() as usize;
            acc += value(k) * x[j];
            k += 1;
            bits &= bits - 1;
        }
    }
    acc
}

#[inline]
fn compute_row(c: &BitmaskCompressed, r: usize, x: &[f32]) -> f32 {
    let words = c.row_mask(r);
    let k = c.row_offsets()[r];
    match c.payload() {
        Payload::Fp32(v) => row_dot(words, x, k, |i| v[i]),
        Payload::Fp16(v) => row_dot(words, x, k, |i| v[i].to_f32()),
        Payload::Int8 { values, scales } => {
            let s = scales[r];
            row_dot(words, x, k, |i| crate::quant::dequantize_value(values[i], s))
        }
    }
}

fn check_dims(c: &BitmaskCompressed, x: &Vector) -> Result<()> {
    if x.len() != c.cols() {
        return Err(Error::shape(format!(
            "sparse matvec: matrix has {} columns, vector has {}",
            c.cols(),
            x.len()
        )));
    }
    if c.row_offsets().len() != c.rows() + 1 || c.row_offsets()[c.rows()] != c.nnz() {
        return Err(Error::corrupt("row offsets disagree with the payload"));
    }
    Ok(())
}

/// `y = W x` without materializing `W`.
pub fn sparse_matvec(c: &BitmaskCompressed, x: &Vector) -> Result<Vector> {
    check_dims(c, x)?;
    let xs = x.as_slice();
    let y = (0..c.rows()).map(|r| compute_row(c, r, xs)).collect();
    Vector::new(y)
}

/// Row tiles of `tile_rows` processed by the worker pool. Bit-identical to
/// [`sparse_matvec`] for every tile size and thread count.
pub fn sparse_matvec_tiled(c: &BitmaskCompressed, x: &Vector, tile_rows: usize) -> Result<Vector> {
    check_dims(c, x)?;
    if tile_rows == 0 {
        return Err(Error::invalid("tile_rows must be at least 1"));
    }
    let xs = x.as_slice();
    let mut y = vec![0.0f32; c.rows()];
    par::for_each_chunk_mut(&mut y, tile_rows, |tile, out| {
        let first = tile * tile_rows;
        for (i, o) in out.iter_mut().enumerate() {
            *o = compute_row(c, first + i, xs);
        }
    });
    Vector::new(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageMode {
    Dense,
    Bitmask,
}

/// Weight bytes a matvec must stream.
///
/// Dense: `rows * cols * value_bytes`. Bitmask: one u32 word per 32 columns
/// of every row, `nnz * value_bytes` packed values, and one FP32 scale per
/// row for INT8. `nnz` is `round(density * rows * cols)`.
pub fn bytes_moved(rows: usize, cols: usize, width: ValueWidth, density: f64, mode: StorageMode) -> Result<u64> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::invalid(format!("density {density} outside [0, 1]")));
    }
    let n = (rows as u64) * (cols as u64);
    let vb = width.bytes() as u64;
    Ok(match mode {
        StorageMode::Dense => n * vb,
        StorageMode::Bitmask => {
            let nnz = (density * n as f64 + 0.5).floor() as u64;
            let scales = if width == ValueWidth::Int8 { 4 * rows as u64 } else { 0 };
            words_per_row(cols) as u64 * 4 * rows as u64 + nnz * vb + scales
        }
    })
}

/// Density below which the bitmask format streams fewer bytes than dense
/// storage of `dense_width`: `1 + value_bits * d < dense_bits`.
pub fn crossover_density(dense_width: ValueWidth, value_width: ValueWidth) -> f64 {
    (dense_width.bits() as f64 - 1.0) / value_width.bits() as f64
}
