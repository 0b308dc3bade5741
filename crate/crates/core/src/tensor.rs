//! Dense row-major matrices and vectors, the baseline representation for
//! weights and activations.
//!
//! Arithmetic is FP32. The matrix type is generic over [`Real`] only so that
//! gradient checks can re-run the same code in double precision.

use std::fmt::Debug;
use std::io::{Read, Write};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::Rng;

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix data".into()));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the payload. Callers must keep values finite.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn same_shape<U>(&self, other: &DenseMatrix<U>) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }

    pub fn count_zeros(&self) -> usize {
        self.data.iter().filter(|v| **v == T::zero()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f32>,
}

impl Vector {
    pub fn new(data: Vec<f32>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector".into()));
        }
        Ok(Vector { data })
    }

    pub fn zeros(len: usize) -> Self {
        Vector {
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }
}

impl From<Vector> for Vec<f32> {
    fn from(v: Vector) -> Self {
        v.data
    }
}

/// Left-to-right FP32 dot product; the summation order every matvec path shares.
#[inline]
pub(crate) fn dot_sequential(w: &[f32], x: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (a, b) in w.iter().zip(x) {
        acc += a * b;
    }
    acc
}

/// `y = W x`, each row accumulated left to right in FP32.
pub fn dense_matvec(w: &DenseMatrix, x: &Vector) -> Result<Vector> {
    check_matvec_dims(w, x)?;
    let mut y = vec![0.0f32; w.rows()];
    for (r, out) in y.iter_mut().enumerate() {
        *out = dot_sequential(w.row(r), x.as_slice());
    }
    Ok(Vector { data: y })
}

/// Row-parallel `dense_matvec`. Per-row order is unchanged, so the result is
/// bit-identical to the sequential version for any thread count.
pub fn dense_matvec_par(w: &DenseMatrix, x: &Vector, tile_rows: usize) -> Result<Vector> {
    check_matvec_dims(w, x)?;
    if tile_rows == 0 {
        return Err(Error::invalid("tile_rows must be at least 1"));
    }
    let mut y = vec![0.0f32; w.rows()];
    let xs = x.as_slice();
    par::for_each_chunk_mut(&mut y, tile_rows, |tile, out| {
        let first = tile * tile_rows;
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot_sequential(w.row(first + i), xs);
        }
    });
    Ok(Vector { data: y })
}

fn check_matvec_dims(w: &DenseMatrix, x: &Vector) -> Result<()> {
    if x.len() != w.cols() {
        return Err(Error::shape(format!(
            "matvec: matrix has {} columns, vector has {} entries",
            w.cols(),
            x.len()
        )));
    }
    Ok(())
}

/// Numerically stable softmax.
pub fn softmax(logits: &Vector) -> Result<Vector> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    let mut p = logits.data.clone();
    softmax_in_place(&mut p);
    Ok(Vector { data: p })
}

/// In-place max-shifted softmax over one row. The row must be nonempty.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// `log softmax` of one row into `out`.
pub fn log_softmax_into<T: Real>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row {
        sum += (*v - max).exp();
    }
    let lse = max + sum.ln();
    for (o, v) in out.iter_mut().zip(row) {
        *o = *v - lse;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    /// Uniform on `[-a, a]`.
    Uniform(f32),
    /// Zero-mean normal with the given standard deviation.
    Gaussian(f32),
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng, dist: Distribution) -> Result<DenseMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!("matrix dimensions must be positive, got {rows}x{cols}")));
    }
    let n = rows * cols;
    let data: Vec<f32> = match dist {
        Distribution::Uniform(a) => {
            let a = a as f64;
            (0..n).map(|_| rng.uniform(-a, a) as f32).collect()
        }
        Distribution::Gaussian(sigma) => {
            let s = sigma as f64;
            (0..n).map(|_| rng.gaussian(0.0, s) as f32).collect()
        }
    };
    DenseMatrix::new(rows, cols, data)
}

pub const SKDM_MAGIC: &[u8; 4] = b"SKDM";

/// Writes the `SKDM` container: magic, u32 rows, u32 cols, LE f32 payload.
pub fn write_skdm<W: Write>(m: &DenseMatrix, mut out: W) -> Result<()> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::invalid("rows exceed u32"))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::invalid("cols exceed u32"))?;
    let mut buf = Vec::with_capacity(12 + 4 * m.len());
    buf.extend_from_slice(SKDM_MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_skdm<R: Read>(mut input: R) -> Result<DenseMatrix> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode_skdm(&bytes)
}

pub fn decode_skdm(bytes: &[u8]) -> Result<DenseMatrix> {
    if bytes.len() < 12 || &bytes[..4] != SKDM_MAGIC {
        return Err(Error::corrupt("missing SKDM header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::corrupt("SKDM dimensions overflow"))?;
    if payload.len() != expected {
        return Err(Error::corrupt(format!(
            "SKDM {rows}x{cols} expects {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseMatrix::new(rows, cols, data).map_err(|e| Error::corrupt(e.to_string()))
}

pub fn save_skdm(m: &DenseMatrix, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_skdm(m, std::io::BufWriter::new(f))
}

pub fn load_skdm(path: &std::path::Path) -> Result<DenseMatrix> {
    let bytes = std::fs::read(path)?;
    decode_skdm(&bytes)
}
