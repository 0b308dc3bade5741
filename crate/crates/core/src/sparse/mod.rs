//! Compressed sparse weight storage.
//!
//! A [`BitmaskCompressed`] matrix stores one presence bit per weight, packed
//! into 32-bit words (LSB = lowest column), plus the surviving values packed
//! densely in row-major scan order. N:M structured matrices use the same
//! container; [`NmPattern`] is only a constraint checked on top of it.

mod format;
mod nm;
mod stats;

pub use format::{
    compress, decode_skbc, decompress, load_skbc, save_skbc, write_skbc, BitmaskCompressed, Payload,
    ValueWidth, SKBC_MAGIC,
};
pub use nm::NmPattern;
pub use stats::{
    bits_per_weight, compression_ratio_to_sparsity, round_percent, sparsity_of,
    sparsity_to_compression_ratio, theoretical_speedup, SparsityStats,
};

/// Number of 32-bit mask words needed for one row of `cols` weights.
#[inline]
pub fn words_per_row(cols: usize) -> usize {
    cols.div_ceil(32)
}

/// Population count of bits `[start, start + len)` in a row's mask words.
pub(crate) fn popcount_range(words: &[u32], start: usize, len: usize) -> u32 {
    let end = start + len;
    let mut count = 0;
    let mut pos = start;
    while pos < end {
        let w = pos / 32;
        let lo = pos % 32;
        let hi = (end - w * 32).min(32);
        let width = hi - lo;
        let mask = if width == 32 { u32::MAX } else { ((1u32 << width) - 1) << lo };
        count += (words[w] & mask).count_ones();
        pos = w * 32 + hi;
    }
    count
}
