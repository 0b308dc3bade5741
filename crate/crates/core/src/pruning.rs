//! Magnitude pruning, N:M projection, mask freezing and the gradual
//! prune-then-fine-tune schedule.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sparse::{words_per_row, NmPattern};
use crate::tensor::{DenseMatrix, Real};

/// One keep/drop bit per weight, packed like the bitmask format (32 columns
/// per word, rows padded independently).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    rows: usize,
    cols: usize,
    bits: Vec<u32>,
}

impl PruneMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        let mut m = PruneMask::empty(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.set(r, c, true);
            }
        }
        m
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        PruneMask {
            rows,
            cols,
            bits: vec![0; rows * words_per_row(cols)],
        }
    }

    /// Keeps exactly the nonzero entries of `w`.
    pub fn from_nonzeros(w: &DenseMatrix) -> Self {
        let mut m = PruneMask::empty(w.rows(), w.cols());
        for r in 0..w.rows() {
            for (c, v) in w.row(r).iter().enumerate() {
                if *v != 0.0 {
                    m.set(r, c, true);
                }
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words(&self) -> &[u32] {
        &self.bits
    }

    #[inline]
    pub fn keep(&self, r: usize, c: usize) -> bool {
        self.bits[r * words_per_row(self.cols) + c / 32] >> (c % 32) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, keep: bool) {
        let w = &mut self.bits[r * words_per_row(self.cols) + c / 32];
        if keep {
            *w |= 1 << (c % 32);
        } else {
            *w &= !(1 << (c % 32));
        }
    }

    pub fn kept(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn density(&self) -> f64 {
        let n = self.rows * self.cols;
        if n == 0 {
            1.0
        } else {
            self.kept() as f64 / n as f64
        }
    }

    fn check_shape<T: Real>(&self, m: &DenseMatrix<T>) -> Result<()> {
        if self.rows != m.rows() || self.cols != m.cols() {
            return Err(Error::shape(format!(
                "mask is {}x{}, matrix is {}x{}",
                self.rows,
                self.cols,
                m.rows(),
                m.cols()
            )));
        }
        Ok(())
    }

    /// Zeroes every dropped position of `m` in place.
    pub fn apply<T: Real>(&self, m: &mut DenseMatrix<T>) -> Result<()> {
        self.check_shape(m)?;
        let cols = self.cols;
        for r in 0..self.rows {
            let row = m.row_mut(r);
            for (c, v) in row.iter_mut().enumerate().take(cols) {
                if !self.keep(r, c) {
                    *v = T::zero();
                }
            }
        }
        Ok(())
    }

    /// `SKPM` file: magic, u32 rows, u32 cols, LE mask words.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + 4 * self.bits.len());
        buf.extend_from_slice(b"SKPM");
        buf.extend_from_slice(&(self.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for w in &self.bits {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != b"SKPM" {
            return Err(Error::corrupt("missing SKPM header"));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n = rows * words_per_row(cols);
        if bytes.len() != 12 + 4 * n {
            return Err(Error::corrupt("SKPM length does not match its shape"));
        }
        let bits: Vec<u32> = bytes[12..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tail = cols % 32;
        if tail != 0 {
            let pad = !((1u32 << tail) - 1);
            let wpr = words_per_row(cols);
            if (0..rows).any(|r| bits[r * wpr + wpr - 1] & pad != 0) {
                return Err(Error::corrupt("SKPM pad bits set"));
            }
        }
        Ok(PruneMask { rows, cols, bits })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        PruneMask::from_bytes(&std::fs::read(path)?)
    }
}

/// Number of weights to drop for `sparsity` of `n`, rounding halves up.
pub fn prune_count(sparsity: f64, n: usize) -> usize {
    ((sparsity * n as f64 + 0.5).floor() as usize).min(n)
}

fn check_sparsity(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::invalid(format!("sparsity {s} outside [0, 1]")));
    }
    Ok(())
}

/// Zeroes the `round(s * N)` smallest-magnitude entries of the layer.
/// Equal magnitudes are pruned in row-major order.
pub fn magnitude_prune(w: &DenseMatrix, sparsity: f64) -> Result<(DenseMatrix, PruneMask)> {
    check_sparsity(sparsity)?;
    let n = w.len();
    let k = prune_count(sparsity, n);
    let mut out = w.clone();
    let mut mask = PruneMask::full(w.rows(), w.cols());
    if k == 0 {
        return Ok((out, mask));
    }
    // |w| bits are order-preserving for finite values; the index breaks ties.
    let mut keys: Vec<u64> = w
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| ((v.abs().to_bits() as u64) << 32) | i as u64)
        .collect();
    if k < n {
        keys.select_nth_unstable(k);
    }
    let cols = w.cols();
    for key in &keys[..k] {
        let i = (key & 0xFFFF_FFFF) as usize;
        out.data_mut()[i] = 0.0;
        mask.set(i / cols, i % cols, false);
    }
    Ok((out, mask))
}

/// Keeps the `n` largest-magnitude entries in every length-`m` block of each
/// row; on ties the lower index is kept.
pub fn nm_project(w: &DenseMatrix, p: NmPattern) -> Result<(DenseMatrix, PruneMask)> {
    p.check_cols(w.cols())?;
    let mut out = w.clone();
    let mut mask = PruneMask::full(w.rows(), w.cols());
    if p.n() == p.m() {
        return Ok((out, mask));
    }
    let m = p.m();
    let mut order: Vec<usize> = Vec::with_capacity(m);
    for r in 0..w.rows() {
        let row = w.row(r);
        for b in 0..w.cols() / m {
            let block = &row[b * m..(b + 1) * m];
            order.clear();
            order.extend(0..m);
            order.sort_by(|&i, &j| block[j].abs().total_cmp(&block[i].abs()).then(i.cmp(&j)));
            for &i in &order[p.n()..] {
                out.set(r, b * m + i, 0.0);
                mask.set(r, b * m + i, false);
            }
        }
    }
    Ok((out, mask))
}

/// Zeroes gradient entries at dropped positions.
pub fn freeze_mask<T: Real>(grad: &DenseMatrix<T>, mask: &PruneMask) -> Result<DenseMatrix<T>> {
    let mut g = grad.clone();
    mask.apply(&mut g)?;
    Ok(g)
}

/// Pluggable pruning rule for a single layer.
pub trait Pruner {
    fn name(&self) -> &str;
    fn prune(&self, w: &DenseMatrix, sparsity: f64) -> Result<(DenseMatrix, PruneMask)>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MagnitudePruner;

impl Pruner for MagnitudePruner {
    fn name(&self) -> &str {
        "magnitude"
    }

    fn prune(&self, w: &DenseMatrix, sparsity: f64) -> Result<(DenseMatrix, PruneMask)> {
        magnitude_prune(w, sparsity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsitySchedule {
    levels: Vec<f64>,
    finetune_epochs_per_level: usize,
}

impl SparsitySchedule {
    pub fn new(levels: Vec<f64>, finetune_epochs_per_level: usize) -> Result<Self> {
        if let Some(bad) = levels.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
            return Err(Error::invalid(format!("schedule level {bad} outside (0, 1]")));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("schedule levels must be strictly increasing"));
        }
        Ok(SparsitySchedule {
            levels,
            finetune_epochs_per_level,
        })
    }

    /// One-shot pruning to `level` followed by fine-tuning.
    pub fn one_shot(level: f64, epochs: usize) -> Result<Self> {
        Self::new(vec![level], epochs)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn finetune_epochs_per_level(&self) -> usize {
        self.finetune_epochs_per_level
    }
}

/// A model whose prunable layers can be read and replaced.
pub trait PrunableModel {
    fn num_prunable(&self) -> usize;
    fn prunable(&self, idx: usize) -> &DenseMatrix;
    /// Replaces layer `idx` with its pruned weights and freezes `mask`.
    fn install_pruned(&mut self, idx: usize, w: DenseMatrix, mask: PruneMask) -> Result<()>;
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelRecord<T> {
    pub level: f64,
    /// Measured after fine-tuning, one entry per prunable layer.
    pub layer_sparsity: Vec<f64>,
    pub metrics: T,
}

/// For each level in order: prune every prunable layer to it, then call
/// `finetune(model, level_index, level)` with masks frozen.
pub fn run_schedule<M, P, F, T>(
    model: &mut M,
    schedule: &SparsitySchedule,
    pruner: &P,
    mut finetune: F,
) -> Result<Vec<LevelRecord<T>>>
where
    M: PrunableModel,
    P: Pruner + ?Sized,
    F: FnMut(&mut M, usize, f64) -> Result<T>,
{
    let mut history = Vec::with_capacity(schedule.levels().len());
    for (i, &level) in schedule.levels().iter().enumerate() {
        let at = |e: Error| Error::AtLevel {
            level,
            source: Box::new(e),
        };
        for layer in 0..model.num_prunable() {
            let (w, mask) = pruner.prune(model.prunable(layer), level).map_err(at)?;
            model.install_pruned(layer, w, mask).map_err(at)?;
        }
        let metrics = finetune(model, i, level).map_err(at)?;
        let layer_sparsity = (0..model.num_prunable())
            .map(|l| {
                let w = model.prunable(l);
                w.count_zeros() as f64 / w.len() as f64
            })
            .collect();
        history.push(LevelRecord {
            level,
            layer_sparsity,
            metrics,
        });
    }
    Ok(history)
}
