use serde::{Deserialize, Serialize};

use crate::distill::TokenBatch;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Per-position classification `y_i = (x_i + x_{i-1}) mod V`, `x_{-1} = 0`.
/// Each sequence has a random length in `[min_len, seq]`; the tail is
/// padding (input id 0, target 0, excluded from losses and metrics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub vocab: usize,
    pub seq: usize,
    pub seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub min_len: usize,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            vocab: 32,
            seq: 16,
            seed: 1,
            train_size: 2048,
            val_size: 256,
            test_size: 512,
            min_len: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    inputs: Vec<u32>,
    batch: TokenBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 || self.seq == 0 {
            return Err(Error::invalid("task needs vocab >= 2 and seq >= 1"));
        }
        if self.min_len == 0 || self.min_len > self.seq {
            return Err(Error::invalid(format!("min_len must lie in [1, {}]", self.seq)));
        }
        if self.train_size == 0 || self.val_size == 0 || self.test_size == 0 {
            return Err(Error::invalid("split sizes must be positive"));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<TaskData> {
        self.validate()?;
        let root = Rng::new(self.seed);
        Ok(TaskData {
            train: self.split(&mut root.fork(0), self.train_size)?,
            val: self.split(&mut root.fork(1), self.val_size)?,
            test: self.split(&mut root.fork(2), self.test_size)?,
        })
    }

    fn split(&self, rng: &mut Rng, count: usize) -> Result<Split> {
        let (v, s) = (self.vocab as u64, self.seq);
        let mut inputs = Vec::with_capacity(count * s);
        let mut targets = Vec::with_capacity(count * s);
        let mut padding = Vec::with_capacity(count * s);
        for _ in 0..count {
            let len = self.min_len + rng.below((s - self.min_len + 1) as u64) as usize;
            let mut prev = 0u32;
            for i in 0..s {
                if i < len {
                    let x = rng.below(v) as u32;
                    inputs.push(x);
                    targets.push(((x as u64 + prev as u64) % v) as u32);
                    padding.push(false);
                    prev = x;
                } else {
                    inputs.push(0);
                    targets.push(0);
                    padding.push(true);
                }
            }
        }
        Ok(Split {
            inputs,
            batch: TokenBatch::new(count, s, targets, padding)?,
        })
    }
}

impl Split {
    pub fn new(inputs: Vec<u32>, batch: TokenBatch) -> Result<Self> {
        if inputs.len() != batch.tokens() {
            return Err(Error::shape("inputs and targets differ in length"));
        }
        Ok(Split { inputs, batch })
    }

    pub fn inputs(&self) -> &[u32] {
        &self.inputs
    }

    pub fn batch(&self) -> &TokenBatch {
        &self.batch
    }

    pub fn len(&self) -> usize {
        self.batch.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seq(&self) -> usize {
        self.batch.seq()
    }

    /// Sequences `idx` in the given order. Fails if they are all padding.
    pub fn select(&self, idx: &[usize]) -> Result<Split> {
        let s = self.seq();
        let mut inputs = Vec::with_capacity(idx.len() * s);
        let mut targets = Vec::with_capacity(idx.len() * s);
        let mut padding = Vec::with_capacity(idx.len() * s);
        for &i in idx {
            if i >= self.len() {
                return Err(Error::invalid(format!("sequence {i} out of range")));
            }
            let r = i * s..(i + 1) * s;
            inputs.extend_from_slice(&self.inputs[r.clone()]);
            targets.extend_from_slice(&self.batch.targets()[r.clone()]);
            padding.extend_from_slice(&self.batch.padding()[r]);
        }
        Split::new(inputs, TokenBatch::new(idx.len(), s, targets, padding)?)
    }

    /// The first `n` sequences (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Result<Split> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}
