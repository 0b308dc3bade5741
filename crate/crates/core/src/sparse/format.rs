use std::io::Write;
use std::path::Path;

use half::f16;
use serde::{Deserialize, Serialize};

use super::words_per_row;
use crate::error::{Error, Result};
use crate::quant;
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueWidth {
    Fp32,
    /// Values rounded through IEEE half precision for storage; compute stays FP32.
    Fp16,
    Int8,
}

impl ValueWidth {
    pub fn bits(self) -> u32 {
        match self {
            ValueWidth::Fp32 => 32,
            ValueWidth::Fp16 => 16,
            ValueWidth::Int8 => 8,
        }
    }

    pub fn bytes(self) -> usize {
        self.bits() as usize / 8
    }

    pub fn tag(self) -> u8 {
        match self {
            ValueWidth::Fp32 => 0,
            ValueWidth::Fp16 => 1,
            ValueWidth::Int8 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ValueWidth::Fp32),
            1 => Ok(ValueWidth::Fp16),
            2 => Ok(ValueWidth::Int8),
            t => Err(Error::corrupt(format!("unknown value width tag {t}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ValueWidth::Fp32 => "fp32",
            ValueWidth::Fp16 => "fp16",
            ValueWidth::Int8 => "int8",
        }
    }
}

impl std::fmt::Display for ValueWidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ValueWidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fp32" | "f32" => Ok(ValueWidth::Fp32),
            "fp16" | "f16" => Ok(ValueWidth::Fp16),
            "int8" | "i8" => Ok(ValueWidth::Int8),
            other => Err(Error::invalid(format!("unknown value width '{other}' (fp32|fp16|int8)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Fp32(Vec<f32>),
    Fp16(Vec<f16>),
    /// Per-row symmetric INT8; `scales.len() == rows`.
    Int8 { values: Vec<i8>, scales: Vec<f32> },
}

impl Payload {
    pub fn width(&self) -> ValueWidth {
        match self {
            Payload::Fp32(_) => ValueWidth::Fp32,
            Payload::Fp16(_) => ValueWidth::Fp16,
            Payload::Int8 { .. } => ValueWidth::Int8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::Fp32(v) => v.len(),
            Payload::Fp16(v) => v.len(),
            Payload::Int8 { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BitmaskCompressed {
    rows: usize,
    cols: usize,
    mask: Vec<u32>,
    payload: Payload,
    /// `row_offsets[r]` is the index of row `r`'s first packed value.
    row_offsets: Vec<usize>,
}

impl BitmaskCompressed {
    /// Assembles a compressed matrix from raw parts, checking every invariant:
    /// mask length, zero pad bits, popcount against payload length, and
    /// finite values and scales.
    pub fn from_parts(rows: usize, cols: usize, mask: Vec<u32>, payload: Payload) -> Result<Self> {
        let wpr = words_per_row(cols);
        if mask.len() != rows * wpr {
            return Err(Error::corrupt(format!(
                "{rows}x{cols} needs {} mask words, got {}",
                rows * wpr,
                mask.len()
            )));
        }
        let tail = cols % 32;
        if tail != 0 && rows > 0 {
            let pad = !((1u32 << tail) - 1);
            for r in 0..rows {
                if mask[r * wpr + wpr - 1] & pad != 0 {
                    return Err(Error::corrupt(format!("row {r} has mask bits set beyond column {cols}")));
                }
            }
        }
        let mut row_offsets = Vec::with_capacity(rows + 1);
        let mut total = 0usize;
        row_offsets.push(0);
        for r in 0..rows {
            total += mask[r * wpr..(r + 1) * wpr]
                .iter()
                .map(|w| w.count_ones() as usize)
                .sum::<usize>();
            row_offsets.push(total);
        }
        if total != payload.len() {
            return Err(Error::corrupt(format!(
                "mask popcount {total} does not match {} packed values",
                payload.len()
            )));
        }
        match &payload {
            Payload::Fp32(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::corrupt("non-finite fp32 value"));
                }
            }
            Payload::Fp16(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::corrupt("non-finite fp16 value"));
                }
            }
            Payload::Int8 { scales, .. } => {
                if scales.len() != rows {
                    return Err(Error::corrupt(format!("{} scales for {rows} rows", scales.len())));
                }
                if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
                    return Err(Error::corrupt("int8 scales must be finite and nonnegative"));
                }
            }
        }
        Ok(BitmaskCompressed {
            rows,
            cols,
            mask,
            payload,
            row_offsets,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words_per_row(&self) -> usize {
        words_per_row(self.cols)
    }

    pub fn mask_words(&self) -> &[u32] {
        &self.mask
    }

    pub fn row_mask(&self, r: usize) -> &[u32] {
        let w = self.words_per_row();
        &self.mask[r * w..(r + 1) * w]
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn value_width(&self) -> ValueWidth {
        self.payload.width()
    }

    pub fn nnz(&self) -> usize {
        self.payload.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn density(&self) -> f64 {
        let n = self.rows * self.cols;
        if n == 0 {
            0.0
        } else {
            self.nnz() as f64 / n as f64
        }
    }

    /// Bytes the kernel streams for the weights: mask words, packed values and,
    /// for INT8, one FP32 scale per row.
    pub fn storage_bytes(&self) -> usize {
        let scales = match self.payload {
            Payload::Int8 { .. } => 4 * self.rows,
            _ => 0,
        };
        4 * self.mask.len() + self.nnz() * self.value_width().bytes() + scales
    }
}

/// Packs the nonzeros of `w`. A bit is set iff the entry is not exactly 0.0.
pub fn compress(w: &DenseMatrix, width: ValueWidth) -> BitmaskCompressed {
    let (rows, cols) = (w.rows(), w.cols());
    let wpr = words_per_row(cols);
    let mut mask = vec![0u32; rows * wpr];
    let mut packed: Vec<f32> = Vec::new();
    for r in 0..rows {
        for (c, &v) in w.row(r).iter().enumerate() {
            if v != 0.0 {
                mask[r * wpr + c / 32] |= 1 << (c % 32);
                packed.push(v);
            }
        }
    }
    let payload = match width {
        ValueWidth::Fp32 => Payload::Fp32(packed),
        ValueWidth::Fp16 => Payload::Fp16(packed.iter().map(|&v| to_f16_saturating(v)).collect()),
        ValueWidth::Int8 => {
            let mut values = Vec::with_capacity(packed.len());
            let mut scales = Vec::with_capacity(rows);
            let mut start = 0;
            for r in 0..rows {
                let n = w.row(r).iter().filter(|v| **v != 0.0).count();
                let row_vals = &packed[start..start + n];
                let scale = quant::row_scale(row_vals);
                scales.push(scale);
                values.extend(row_vals.iter().map(|&v| quant::quantize_value(v, scale)));
                start += n;
            }
            Payload::Int8 { values, scales }
        }
    };
    BitmaskCompressed::from_parts(rows, cols, mask, payload).expect("compress builds a coherent container")
}

fn to_f16_saturating(v: f32) -> f16 {
    let max = f16::MAX.to_f32();
    f16::from_f32(v.clamp(-max, max))
}

/// Materializes the dense matrix; INT8 values are dequantized with their row scale.
pub fn decompress(c: &BitmaskCompressed) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(c.rows, c.cols);
    for r in 0..c.rows {
        let mut k = c.row_offsets[r];
        let row_mask = c.row_mask(r);
        let out_row = out.row_mut(r);
        for (wi, &word) in row_mask.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let col = wi * 32 + bits.trailing_zeros() as usize;
                out_row[col] = value_at(&c.payload, r, k);
                k += 1;
                bits &= bits - 1;
            }
        }
    }
    out
}

#[inline]
fn value_at(p: &Payload, row: usize, k: usize) -> f32 {
    match p {
        Payload::Fp32(v) => v[k],
        Payload::Fp16(v) => v[k].to_f32(),
        Payload::Int8 { values, scales } => quant::dequantize_value(values[k], scales[row]),
    }
}

pub const SKBC_MAGIC: &[u8; 4] = b"SKBC";

/// `SKBC` container: magic, u32 rows, u32 cols, u8 width tag, LE mask words,
/// packed values, then per-row FP32 scales for INT8.
pub fn write_skbc<W: Write>(c: &BitmaskCompressed, mut out: W) -> Result<()> {
    let rows = u32::try_from(c.rows).map_err(|_| Error::invalid("rows exceed u32"))?;
    let cols = u32::try_from(c.cols).map_err(|_| Error::invalid("cols exceed u32"))?;
    let mut buf = Vec::with_capacity(13 + c.storage_bytes());
    buf.extend_from_slice(SKBC_MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    buf.push(c.value_width().tag());
    for w in &c.mask {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    match &c.payload {
        Payload::Fp32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        Payload::Fp16(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_bits().to_le_bytes())),
        Payload::Int8 { values, scales } => {
            buf.extend(values.iter().map(|&q| q as u8));
            scales.iter().for_each(|s| buf.extend_from_slice(&s.to_le_bytes()));
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn decode_skbc(bytes: &[u8]) -> Result<BitmaskCompressed> {
    if bytes.len() < 13 || &bytes[..4] != SKBC_MAGIC {
        return Err(Error::corrupt("missing SKBC header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let width = ValueWidth::from_tag(bytes[12])?;
    let n_words = rows
        .checked_mul(words_per_row(cols))
        .ok_or_else(|| Error::corrupt("SKBC dimensions overflow"))?;
    let mut rest = &bytes[13..];
    if rest.len() < n_words * 4 {
        return Err(Error::corrupt("truncated mask words"));
    }
    let mask: Vec<u32> = rest[..n_words * 4]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    rest = &rest[n_words * 4..];
    let nnz: usize = mask.iter().map(|w| w.count_ones() as usize).sum();
    let expected = nnz * width.bytes() + if width == ValueWidth::Int8 { 4 * rows } else { 0 };
    if rest.len() != expected {
        return Err(Error::corrupt(format!(
            "mask popcount {nnz} implies {expected} payload bytes, found {}",
            rest.len()
        )));
    }
    let payload = match width {
        ValueWidth::Fp32 => Payload::Fp32(
            rest.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        ValueWidth::Fp16 => Payload::Fp16(
            rest.chunks_exact(2)
                .map(|c| f16::from_bits(u16::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        ),
        ValueWidth::Int8 => {
            let (vals, sc) = rest.split_at(nnz);
            Payload::Int8 {
                values: vals.iter().map(|&b| b as i8).collect(),
                scales: sc
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            }
        }
    };
    BitmaskCompressed::from_parts(rows, cols, mask, payload)
}

pub fn save_skbc(c: &BitmaskCompressed, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_skbc(c, std::io::BufWriter::new(f))
}

pub fn load_skbc(path: &Path) -> Result<BitmaskCompressed> {
    decode_skbc(&std::fs::read(path)?)
}
