#![allow(dead_code)]

use sparsekit::distill::TokenBatch;
use sparsekit::model::{TinyModel, TinyModelConfig};
use sparsekit::rng::Rng;

/// Relative error with a floor so that two tiny numbers compare as equal.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central finite difference of `f` at `x[i]`.
pub fn central_diff(x: &mut [f64], i: usize, h: f64, f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

pub fn gaussian_vec(rng: &mut Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gaussian(0.0, std)).collect()
}

/// Random targets with `pads` padding positions, never all padding.
pub fn random_batch(rng: &mut Rng, batch: usize, seq: usize, vocab: usize, pads: usize) -> TokenBatch {
    let n = batch * seq;
    let pads = pads.min(n - 1);
    let targets = (0..n).map(|_| rng.below(vocab as u64) as u32).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let mut padding = vec![false; n];
    for &i in idx.iter().take(pads) {
        padding[i] = true;
    }
    TokenBatch::new(batch, seq, targets, padding).unwrap()
}

pub fn small_config() -> TinyModelConfig {
    TinyModelConfig {
        vocab: 5,
        d_model: 4,
        blocks: 2,
        seq: 3,
        hidden_mult: 2,
    }
}

pub fn random_model(cfg: TinyModelConfig, seed: u64) -> TinyModel {
    TinyModel::init(cfg, &mut Rng::new(seed)).unwrap()
}

/// Brute-force top-`n` survivors of one block: all `n`-subsets, pick the one
/// with the largest |w| sum, ties to the lexicographically smallest indices.
pub fn brute_force_block(block: &[f32], n: usize) -> Vec<bool> {
    let m = block.len();
    let mut best: Option<(Vec<usize>, Vec<f32>)> = None;
    let mut combo: Vec<usize> = (0..n).collect();
    loop {
        let mut mags: Vec<f32> = combo.iter().map(|&i| block[i].abs()).collect();
        mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let better = match &best {
            None => true,
            Some((_, bm)) => mags > *bm,
        };
        if better {
            best = Some((combo.clone(), mags));
        }
        // next combination in lexicographic order
        let mut i = n;
        loop {
            if i == 0 {
                let keep = best.unwrap().0;
                return (0..m).map(|j| keep.contains(&j)).collect();
            }
            i -= 1;
            if combo[i] < m - n + i {
                combo[i] += 1;
                for k in i + 1..n {
                    combo[k] = combo[k - 1] + 1;
                }
                break;
            }
        }
    }
}

use sparsekit::pruning::magnitude_prune;
use sparsekit::tensor::{random_matrix, DenseMatrix, Distribution};

/// Gaussian matrix with `sparsity` of its entries zeroed by magnitude.
pub fn sparse_matrix(rows: usize, cols: usize, sparsity: f64, seed: u64) -> DenseMatrix {
    let w = random_matrix(rows, cols, &mut Rng::new(seed), Distribution::Gaussian(1.0)).unwrap();
    magnitude_prune(&w, sparsity).unwrap().0
}

/// Largest possible rounding error of `y = W x` for one row: a loose
/// multiple of the sum of absolute products.
pub fn abs_products(w: &DenseMatrix, x: &[f32], r: usize) -> f64 {
    w.row(r).iter().zip(x).map(|(a, b)| (*a as f64 * *b as f64).abs()).sum()
}
