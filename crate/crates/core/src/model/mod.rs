//! Desk-scale sequence classifier used as teacher and student.
//!
//! Token `t` at position `i` is embedded as `E[x_i] + P[x_{i-1}]` (with
//! `x_{-1} = 0`), passed through `L` residual blocks
//! `h <- h + W2 tanh(W1 h + b1) + b2`, and projected to logits by a linear
//! head. Each block output is one feature map for the SquareHead loss.
//! Positions are processed independently; the previous-token embedding is
//! the only sequence mixing.

mod checkpoint;
mod experiment;
mod task;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamEntry};
pub use experiment::{
    run_recovery_experiment, train_teacher, write_accuracy_csv, write_plot_csv, write_quant_csv,
    ExperimentReport, ExperimentSpec, PruneMode, RunRow, SummaryRow,
};
pub use task::{Split, SyntheticTask, TaskData};
pub use train::{
    detect_divergence, evaluate, learning_rate, learning_rate_to, train, write_steps_csv, DivergenceDetector, EpochRecord, EvalResult,
    StepRecord, TrainConfig, TrainRun, DIVERGENCE_FACTOR, DIVERGENCE_WINDOW,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pruning::{PrunableModel, PruneMask};
use crate::rng::Rng;
use crate::tensor::{DenseMatrix, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TinyModelConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub blocks: usize,
    pub seq: usize,
    pub hidden_mult: usize,
}

impl Default for TinyModelConfig {
    fn default() -> Self {
        TinyModelConfig {
            vocab: 32,
            d_model: 64,
            blocks: 2,
            seq: 16,
            hidden_mult: 4,
        }
    }
}

impl TinyModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.d_model == 0 || self.blocks == 0 || self.seq == 0 || self.hidden_mult == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.d_model % 4 != 0 {
            return Err(Error::invalid(format!("d_model {} is not divisible by 4", self.d_model)));
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.d_model * self.hidden_mult
    }
}

const EMBED: usize = 0;
const PREV_EMBED: usize = 1;
const FIRST_BLOCK: usize = 2;
const PER_BLOCK: usize = 4;
/// Init std of both embedding tables. Larger values make the residual
/// stream dominate the block outputs, which weakens the normalized feature
/// loss relative to the task loss.
const EMBED_STD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct TinyModel<T = f32> {
    config: TinyModelConfig,
    params: Vec<DenseMatrix<T>>,
    masks: Vec<Option<PruneMask>>,
    prunable: Vec<usize>,
}

/// Parameter gradients, in the model's canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T> {
    pub params: Vec<DenseMatrix<T>>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    tokens: usize,
    /// `hidden[0]` is the embedding sum, `hidden[l + 1]` the output of block `l`.
    hidden: Vec<Vec<T>>,
    /// `tanh` activations of each block's expansion layer.
    activ: Vec<Vec<T>>,
    prev_ids: Vec<u32>,
    ids: Vec<u32>,
    pub logits: Vec<T>,
}

impl<T> ForwardPass<T> {
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// Block outputs, one flat `[tokens x d_model]` map per block.
    pub fn features(&self) -> &[Vec<T>] {
        &self.hidden[1..]
    }
}

const LANES: usize = 8;

#[inline(always)]
fn reduce_lanes<T: Real>(l: &[T; LANES]) -> T {
    ((l[0] + l[1]) + (l[2] + l[3])) + ((l[4] + l[5]) + (l[6] + l[7]))
}

/// Dot product with eight interleaved partial sums.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); LANES];
    let (ac, bc) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for k in 0..LANES {
            lanes[k] += x[k] * y[k];
        }
    }
    let mut acc = reduce_lanes(&lanes);
    for (x, y) in ar.iter().zip(br) {
        acc += *x * *y;
    }
    acc
}

/// Four dot products against a shared `w`, each summed exactly as [`dot`] would.
#[inline]
fn dot4<T: Real>(x: [&[T]; 4], w: &[T]) -> [T; 4] {
    let mut lanes = [[T::zero(); LANES]; 4];
    let n = w.len() / LANES * LANES;
    let mut i = 0;
    while i < n {
        let wc = &w[i..i + LANES];
        for (q, lane) in lanes.iter_mut().enumerate() {
            let xc = &x[q][i..i + LANES];
            for k in 0..LANES {
                lane[k] += xc[k] * wc[k];
            }
        }
        i += LANES;
    }
    let mut out = [T::zero(); 4];
    for q in 0..4 {
        let mut acc = reduce_lanes(&lanes[q]);
        for j in n..w.len() {
            acc += x[q][j] * w[j];
        }
        out[q] = acc;
    }
    out
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// `out[n, :] = bias + W input[n, :]` for `W` stored `out_dim x in_dim`.
fn linear<T: Real>(input: &[T], w: &DenseMatrix<T>, bias: &[T], out: &mut [T]) {
    let (od, id) = (w.rows(), w.cols());
    let n = input.len() / id;
    let groups = n / 4;
    for g in 0..groups {
        let t = 4 * g;
        let x = [
            &input[t * id..(t + 1) * id],
            &input[(t + 1) * id..(t + 2) * id],
            &input[(t + 2) * id..(t + 3) * id],
            &input[(t + 3) * id..(t + 4) * id],
        ];
        let o = &mut out[t * od..(t + 4) * od];
        for j in 0..od {
            let s = dot4(x, w.row(j));
            for q in 0..4 {
                o[q * od + j] = bias[j] + s[q];
            }
        }
    }
    for t in groups * 4..n {
        let x = &input[t * id..(t + 1) * id];
        let o = &mut out[t * od..(t + 1) * od];
        for (j, oj) in o.iter_mut().enumerate() {
            *oj = bias[j] + dot(x, w.row(j));
        }
    }
}

/// `y += a0 x0 + a1 x1 + a2 x2 + a3 x3`.
#[inline]
fn axpy4<T: Real>(a: [T; 4], x: [&[T]; 4], y: &mut [T]) {
    for (i, yi) in y.iter_mut().enumerate() {
        *yi += (a[0] * x[0][i] + a[1] * x[1][i]) + (a[2] * x[2][i] + a[3] * x[3][i]);
    }
}

/// `gw[o, :] += sum_t dy[t, o] x[t, :]` and `gb[o] += sum_t dy[t, o]`.
fn accumulate_weight_grad<T: Real>(
    dy: &[T],
    x: &[T],
    out_dim: usize,
    in_dim: usize,
    gw: &mut DenseMatrix<T>,
    gb: &mut DenseMatrix<T>,
) {
    let n = dy.len() / out_dim;
    let groups = n / 4;
    for g in 0..groups {
        let t = 4 * g;
        let xs = [
            &x[t * in_dim..(t + 1) * in_dim],
            &x[(t + 1) * in_dim..(t + 2) * in_dim],
            &x[(t + 2) * in_dim..(t + 3) * in_dim],
            &x[(t + 3) * in_dim..(t + 4) * in_dim],
        ];
        for o in 0..out_dim {
            let a = [
                dy[t * out_dim + o],
                dy[(t + 1) * out_dim + o],
                dy[(t + 2) * out_dim + o],
                dy[(t + 3) * out_dim + o],
            ];
            if a.iter().all(|v| *v == T::zero()) {
                continue;
            }
            gb.data_mut()[o] += (a[0] + a[1]) + (a[2] + a[3]);
            axpy4(a, xs, gw.row_mut(o));
        }
    }
    for t in groups * 4..n {
        let xt = &x[t * in_dim..(t + 1) * in_dim];
        for o in 0..out_dim {
            let g = dy[t * out_dim + o];
            if g != T::zero() {
                gb.data_mut()[o] += g;
                axpy(g, xt, gw.row_mut(o));
            }
        }
    }
}

/// `dx[t, :] += sum_o dy[t, o] W[o, :]`.
fn backprop_input<T: Real>(dy: &[T], w: &DenseMatrix<T>, dx: &mut [T]) {
    let (od, id) = (w.rows(), w.cols());
    for (g, out) in dy.chunks_exact(od).zip(dx.chunks_exact_mut(id)) {
        if g.iter().all(|v| *v == T::zero()) {
            continue;
        }
        let mut o = 0;
        while o + 4 <= od {
            let a = [g[o], g[o + 1], g[o + 2], g[o + 3]];
            axpy4(a, [w.row(o), w.row(o + 1), w.row(o + 2), w.row(o + 3)], out);
            o += 4;
        }
        for (k, &gv) in g.iter().enumerate().skip(o) {
            axpy(gv, w.row(k), out);
        }
    }
}

impl<T: Real> TinyModel<T> {
    pub fn zeros(config: TinyModelConfig) -> Result<Self> {
        config.validate()?;
        let (v, d, h) = (config.vocab, config.d_model, config.hidden());
        let mut params = vec![DenseMatrix::zeros(v, d), DenseMatrix::zeros(v, d)];
        for _ in 0..config.blocks {
            params.push(DenseMatrix::zeros(h, d));
            params.push(DenseMatrix::zeros(1, h));
            params.push(DenseMatrix::zeros(d, h));
            params.push(DenseMatrix::zeros(1, d));
        }
        params.push(DenseMatrix::zeros(v, d));
        params.push(DenseMatrix::zeros(1, v));
        let prunable = (0..config.blocks)
            .flat_map(|l| [FIRST_BLOCK + PER_BLOCK * l, FIRST_BLOCK + PER_BLOCK * l + 2])
            .collect();
        let masks = vec![None; params.len()];
        Ok(TinyModel {
            config,
            params,
            masks,
            prunable,
        })
    }

    /// Gaussian initialization scaled by fan-in; biases start at zero.
    pub fn init(config: TinyModelConfig, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let d = config.d_model as f64;
        let h = config.hidden() as f64;
        for i in 0..m.params.len() {
            let std = match m.param_role(i) {
                ParamRole::Embedding => EMBED_STD,
                ParamRole::Expand => 1.0 / d.sqrt(),
                ParamRole::Contract => 1.0 / h.sqrt(),
                ParamRole::Head => 1.0 / d.sqrt(),
                ParamRole::Bias => 0.0,
            };
            for v in m.params[i].data_mut() {
                *v = T::of(rng.gaussian(0.0, std));
            }
        }
        Ok(m)
    }

    pub fn config(&self) -> &TinyModelConfig {
        &self.config
    }

    fn head_index(&self) -> usize {
        FIRST_BLOCK + PER_BLOCK * self.config.blocks
    }

    fn param_role(&self, i: usize) -> ParamRole {
        let head = self.head_index();
        match i {
            EMBED | PREV_EMBED => ParamRole::Embedding,
            _ if i == head => ParamRole::Head,
            _ if i == head + 1 => ParamRole::Bias,
            _ => match (i - FIRST_BLOCK) % PER_BLOCK {
                0 => ParamRole::Expand,
                2 => ParamRole::Contract,
                _ => ParamRole::Bias,
            },
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["embed".to_string(), "prev_embed".to_string()];
        for l in 0..self.config.blocks {
            for p in ["w1", "b1", "w2", "b2"] {
                names.push(format!("block{l}.{p}"));
            }
        }
        names.push("head".into());
        names.push("head_bias".into());
        names
    }

    pub fn params(&self) -> &[DenseMatrix<T>] {
        &self.params
    }

    /// Mutable parameters. Frozen (masked) positions must stay zero.
    pub fn params_mut(&mut self) -> &mut [DenseMatrix<T>] {
        &mut self.params
    }

    pub fn masks(&self) -> &[Option<PruneMask>] {
        &self.masks
    }

    /// Indices (into `params`) of the linear weights that the pruner targets.
    pub fn prunable_params(&self) -> &[usize] {
        &self.prunable
    }

    /// Also expose the output head to pruning.
    pub fn set_head_prunable(&mut self, yes: bool) {
        let head = self.head_index();
        self.prunable.retain(|&i| i != head);
        if yes {
            self.prunable.push(head);
        }
    }

    /// Indices of every matrix applied as a linear map (block weights and head).
    pub fn linear_params(&self) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| {
                matches!(
                    self.param_role(i),
                    ParamRole::Expand | ParamRole::Contract | ParamRole::Head
                )
            })
            .collect()
    }

    pub fn install_mask(&mut self, param: usize, mask: PruneMask) -> Result<()> {
        mask.apply(&mut self.params[param])?;
        self.masks[param] = Some(mask);
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> TinyModel<U> {
        TinyModel {
            config: self.config,
            params: self.params.iter().map(|p| p.cast()).collect(),
            masks: self.masks.clone(),
            prunable: self.prunable.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn block(&self, l: usize) -> (&DenseMatrix<T>, &[T], &DenseMatrix<T>, &[T]) {
        let i = FIRST_BLOCK + PER_BLOCK * l;
        (
            &self.params[i],
            self.params[i + 1].data(),
            &self.params[i + 2],
            self.params[i + 3].data(),
        )
    }

    /// Runs `inputs` (batch-major, `seq` positions per sequence).
    pub fn forward(&self, inputs: &[u32], seq: usize) -> Result<ForwardPass<T>> {
        let c = &self.config;
        if seq == 0 || inputs.len() % seq != 0 {
            return Err(Error::shape(format!("{} tokens is not a whole number of length-{seq} sequences", inputs.len())));
        }
        if let Some(bad) = inputs.iter().find(|t| **t as usize >= c.vocab) {
            return Err(Error::invalid(format!("token id {bad} >= vocab {}", c.vocab)));
        }
        let n = inputs.len();
        let (d, hdim, v) = (c.d_model, c.hidden(), c.vocab);
        let prev_ids: Vec<u32> = (0..n).map(|i| if i % seq == 0 { 0 } else { inputs[i - 1] }).collect();

        let mut h0 = vec![T::zero(); n * d];
        for (i, row) in h0.chunks_exact_mut(d).enumerate() {
            let e = self.params[EMBED].row(inputs[i] as usize);
            let p = self.params[PREV_EMBED].row(prev_ids[i] as usize);
            for k in 0..d {
                row[k] = e[k] + p[k];
            }
        }
        let mut hidden = vec![h0];
        let mut activ = Vec::with_capacity(c.blocks);
        for l in 0..c.blocks {
            let (w1, b1, w2, b2) = self.block(l);
            let prev = hidden.last().expect("embedding layer");
            let mut z = vec![T::zero(); n * hdim];
            linear(prev, w1, b1, &mut z);
            for a in z.iter_mut() {
                *a = a.tanh();
            }
            let mut out = vec![T::zero(); n * d];
            linear(&z, w2, b2, &mut out);
            for (o, p) in out.iter_mut().zip(prev) {
                *o += *p;
            }
            activ.push(z);
            hidden.push(out);
        }
        let head = self.head_index();
        let mut logits = vec![T::zero(); n * v];
        linear(hidden.last().expect("blocks"), &self.params[head], self.params[head + 1].data(), &mut logits);
        Ok(ForwardPass {
            tokens: n,
            hidden,
            activ,
            prev_ids,
            ids: inputs.to_vec(),
            logits,
        })
    }

    /// Reverse-mode gradients given d(loss)/d(logits) and, optionally,
    /// d(loss)/d(block output) for every block (empty slice for none).
    /// Gradients at frozen positions are zeroed.
    pub fn backward(&self, pass: &ForwardPass<T>, grad_logits: &[T], grad_features: &[Vec<T>]) -> Result<ModelGrads<T>> {
        let c = &self.config;
        let (n, d, hdim, v) = (pass.tokens, c.d_model, c.hidden(), c.vocab);
        if grad_logits.len() != n * v {
            return Err(Error::shape("logit gradient does not match the forward pass"));
        }
        if !grad_features.is_empty()
            && (grad_features.len() != c.blocks || grad_features.iter().any(|g| g.len() != n * d))
        {
            return Err(Error::shape("feature gradients do not match the forward pass"));
        }
        let mut grads: Vec<DenseMatrix<T>> = self
            .params
            .iter()
            .map(|p| DenseMatrix::zeros(p.rows(), p.cols()))
            .collect();

        let head = self.head_index();
        let h_last = &pass.hidden[c.blocks];
        let mut dh = vec![T::zero(); n * d];
        {
            let (gw, gb) = grads[head..head + 2].split_at_mut(1);
            accumulate_weight_grad(grad_logits, h_last, v, d, &mut gw[0], &mut gb[0]);
        }
        backprop_input(grad_logits, &self.params[head], &mut dh);
        if let Some(gf) = grad_features.last() {
            for (a, b) in dh.iter_mut().zip(gf) {
                *a += *b;
            }
        }

        for l in (0..c.blocks).rev() {
            let base = FIRST_BLOCK + PER_BLOCK * l;
            let (w1, _, w2, _) = self.block(l);
            let z = &pass.activ[l];
            let h_prev = &pass.hidden[l];
            let (gw1, rest) = grads[base..base + 4].split_at_mut(1);
            let (gb1, rest) = rest.split_at_mut(1);
            let (gw2, gb2) = rest.split_at_mut(1);
            accumulate_weight_grad(&dh, z, d, hdim, &mut gw2[0], &mut gb2[0]);
            let mut da = vec![T::zero(); n * hdim];
            backprop_input(&dh, w2, &mut da);
            for (a, zv) in da.iter_mut().zip(z) {
                *a *= T::one() - *zv * *zv;
            }
            accumulate_weight_grad(&da, h_prev, hdim, d, &mut gw1[0], &mut gb1[0]);
            let mut dprev = dh;
            backprop_input(&da, w1, &mut dprev);
            if l >= 1 {
                if let Some(gf) = grad_features.get(l - 1) {
                    for (a, b) in dprev.iter_mut().zip(gf) {
                        *a += *b;
                    }
                }
            }
            dh = dprev;
        }

        for t in 0..n {
            let g = &dh[t * d..(t + 1) * d];
            axpy(T::one(), g, grads[EMBED].row_mut(pass.ids[t] as usize));
            axpy(T::one(), g, grads[PREV_EMBED].row_mut(pass.prev_ids[t] as usize));
        }

        for (g, m) in grads.iter_mut().zip(&self.masks) {
            if let Some(mask) = m {
                mask.apply(g)?;
            }
        }
        Ok(ModelGrads { params: grads })
    }

    /// `w <- w - lr * (g + weight_decay * w)`; weight decay skips biases.
    /// Frozen positions are re-zeroed afterwards.
    pub fn sgd_step(&mut self, grads: &ModelGrads<T>, lr: T, weight_decay: T) -> Result<()> {
        if grads.params.len() != self.params.len() {
            return Err(Error::shape("gradient set does not match the model"));
        }
        for i in 0..self.params.len() {
            let wd = if self.param_role(i) == ParamRole::Bias {
                T::zero()
            } else {
                weight_decay
            };
            let g = &grads.params[i];
            if !g.same_shape(&self.params[i]) {
                return Err(Error::shape(format!("gradient {i} has the wrong shape")));
            }
            for (w, gv) in self.params[i].data_mut().iter_mut().zip(g.data()) {
                *w -= lr * (*gv + wd * *w);
            }
            if let Some(mask) = &self.masks[i] {
                mask.apply(&mut self.params[i])?;
            }
        }
        Ok(())
    }
}

impl TinyModel<f32> {
    /// Copy with every linear weight passed through INT8 quantize/dequantize.
    pub fn fake_quantized(&self) -> TinyModel<f32> {
        let mut q = self.clone();
        for i in self.linear_params() {
            q.params[i] = crate::quant::fake_quantize(&self.params[i]);
        }
        q
    }

    /// Fraction of exact zeros over the prunable weights.
    pub fn prunable_sparsity(&self) -> f64 {
        let (zeros, total) = self.prunable.iter().fold((0usize, 0usize), |(z, t), &i| {
            (z + self.params[i].count_zeros(), t + self.params[i].len())
        });
        if total == 0 {
            0.0
        } else {
            zeros as f64 / total as f64
        }
    }
}

impl PrunableModel for TinyModel<f32> {
    fn num_prunable(&self) -> usize {
        self.prunable.len()
    }

    fn prunable(&self, idx: usize) -> &DenseMatrix {
        &self.params[self.prunable[idx]]
    }

    fn install_pruned(&mut self, idx: usize, w: DenseMatrix, mask: PruneMask) -> Result<()> {
        let p = self.prunable[idx];
        if !w.same_shape(&self.params[p]) {
            return Err(Error::shape("pruned weights do not match the layer"));
        }
        self.params[p] = w;
        self.install_mask(p, mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamRole {
    Embedding,
    Expand,
    Contract,
    Head,
    Bias,
}
