use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{popcount_range, BitmaskCompressed};
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// `n` nonzeros in every block of `m` consecutive weights along a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NmPattern {
    n: usize,
    m: usize,
}

impl NmPattern {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n == 0 || n > m {
            return Err(Error::invalid(format!("N:M pattern needs 1 <= n <= m, got {n}:{m}")));
        }
        Ok(NmPattern { n, m })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.n as f64 / self.m as f64
    }

    pub fn check_cols(&self, cols: usize) -> Result<()> {
        if cols % self.m != 0 {
            return Err(Error::shape(format!("block length {} does not divide {cols} columns", self.m)));
        }
        Ok(())
    }

    /// True when every length-`m` block of every row holds at most `n` nonzeros.
    pub fn conforms(&self, w: &DenseMatrix) -> bool {
        if self.check_cols(w.cols()).is_err() {
            return false;
        }
        (0..w.rows()).all(|r| {
            w.row(r)
                .chunks(self.m)
                .all(|b| b.iter().filter(|v| **v != 0.0).count() <= self.n)
        })
    }

    /// Same check on the mask of a compressed matrix.
    pub fn conforms_compressed(&self, c: &BitmaskCompressed) -> bool {
        if self.check_cols(c.cols()).is_err() {
            return false;
        }
        (0..c.rows()).all(|r| {
            let words = c.row_mask(r);
            (0..c.cols() / self.m).all(|b| popcount_range(words, b * self.m, self.m) as usize <= self.n)
        })
    }
}

impl fmt::Display for NmPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.n, self.m)
    }
}

impl FromStr for NmPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (n, m) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("expected N:M, got '{s}'")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad N:M component '{t}' in '{s}'")))
        };
        NmPattern::new(parse(n)?, parse(m)?)
    }
}
