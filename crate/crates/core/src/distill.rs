//! Sparse fine-tuning losses with hand-derived gradients.
//!
//! * task loss: masked token cross-entropy
//! * logit KD: per-token KL(teacher || student) over the vocabulary,
//!   averaged over non-padding tokens
//! * SquareHead: per-block `MSE(f_t, f_s) / MSE(f_t, 0)` over non-padding
//!   tokens, summed over blocks
//!
//! Logits are flat `[tokens x vocab]` slices, feature maps flat
//! `[tokens x d_model]`, tokens in batch-major order. Teacher outputs are
//! constants; only student gradients are produced.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{log_softmax_into, softmax_in_place, Real};

/// Below this teacher mean square the SquareHead normalizer is rejected.
pub const DEGENERATE_TEACHER_EPS: f64 = 1e-12;

/// Targets and padding flags for `batch x seq` token positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    batch: usize,
    seq: usize,
    targets: Vec<u32>,
    padding: Vec<bool>,
    active: usize,
}

impl TokenBatch {
    /// `padding[i]` is true when position `i` is a padding token.
    pub fn new(batch: usize, seq: usize, targets: Vec<u32>, padding: Vec<bool>) -> Result<Self> {
        let n = batch * seq;
        if targets.len() != n || padding.len() != n {
            return Err(Error::shape(format!(
                "batch {batch}x{seq} needs {n} targets and padding flags, got {} and {}",
                targets.len(),
                padding.len()
            )));
        }
        let active = padding.iter().filter(|p| !**p).count();
        if active == 0 {
            return Err(Error::AllPadding);
        }
        Ok(TokenBatch {
            batch,
            seq,
            targets,
            padding,
            active,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq(&self) -> usize {
        self.seq
    }

    pub fn tokens(&self) -> usize {
        self.batch * self.seq
    }

    pub fn targets(&self) -> &[u32] {
        &self.targets
    }

    pub fn padding(&self) -> &[bool] {
        &self.padding
    }

    #[inline]
    pub fn is_pad(&self, i: usize) -> bool {
        self.padding[i]
    }

    pub fn active_tokens(&self) -> usize {
        self.active
    }

    pub fn check_vocab(&self, vocab: usize) -> Result<()> {
        if let Some(t) = self.targets.iter().find(|t| **t as usize >= vocab) {
            return Err(Error::invalid(format!("target id {t} >= vocab {vocab}")));
        }
        Ok(())
    }
}

/// A scalar loss and its gradient with respect to the student tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T> {
    pub loss: T,
    pub grad: Vec<T>,
}

fn check_rows<T: Real>(what: &str, data: &[T], width: usize, batch: &TokenBatch) -> Result<()> {
    if width == 0 || data.len() != batch.tokens() * width {
        return Err(Error::shape(format!(
            "{what}: expected {} x {width} values, got {}",
            batch.tokens(),
            data.len()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

/// Mean cross-entropy over non-padding tokens; gradient `(p - onehot) / count`.
pub fn task_loss<T: Real>(logits: &[T], vocab: usize, batch: &TokenBatch) -> Result<LossGrad<T>> {
    check_rows("student logits", logits, vocab, batch)?;
    batch.check_vocab(vocab)?;
    let inv_count = T::one() / T::of(batch.active_tokens() as f64);
    let mut grad = vec![T::zero(); logits.len()];
    let mut logp = vec![T::zero(); vocab];
    let mut total = T::zero();
    for i in 0..batch.tokens() {
        if batch.is_pad(i) {
            continue;
        }
        let row = &logits[i * vocab..(i + 1) * vocab];
        log_softmax_into(row, &mut logp);
        let t = batch.targets[i] as usize;
        total -= logp[t];
        let g = &mut grad[i * vocab..(i + 1) * vocab];
        for (gv, lp) in g.iter_mut().zip(&logp) {
            *gv = lp.exp() * inv_count;
        }
        g[t] -= inv_count;
    }
    Ok(LossGrad {
        loss: total * inv_count,
        grad,
    })
}

/// Logit distillation: mean over non-padding tokens of `KL(p_t || p_s)`.
pub fn logit_kd_loss<T: Real>(
    teacher_logits: &[T],
    student_logits: &[T],
    vocab: usize,
    batch: &TokenBatch,
) -> Result<LossGrad<T>> {
    logit_kd_loss_with_temperature(teacher_logits, student_logits, vocab, batch, T::one())
}

/// Logit distillation with both distributions softened by `temperature`.
/// The gradient is that of this exact loss: `(p_s - p_t) / (count * temperature)`.
pub fn logit_kd_loss_with_temperature<T: Real>(
    teacher_logits: &[T],
    student_logits: &[T],
    vocab: usize,
    batch: &TokenBatch,
    temperature: T,
) -> Result<LossGrad<T>> {
    check_rows("teacher logits", teacher_logits, vocab, batch)?;
    check_rows("student logits", student_logits, vocab, batch)?;
    if !(temperature > T::zero()) || !temperature.is_finite() {
        return Err(Error::invalid("temperature must be positive"));
    }
    let inv_t = T::one() / temperature;
    let inv_count = T::one() / T::of(batch.active_tokens() as f64);
    let mut grad = vec![T::zero(); student_logits.len()];
    let mut lt = vec![T::zero(); vocab];
    let mut ls = vec![T::zero(); vocab];
    let mut scaled = vec![T::zero(); vocab];
    let mut total = T::zero();
    for i in 0..batch.tokens() {
        if batch.is_pad(i) {
            continue;
        }
        let span = i * vocab..(i + 1) * vocab;
        for (s, v) in scaled.iter_mut().zip(&teacher_logits[span.clone()]) {
            *s = *v * inv_t;
        }
        log_softmax_into(&scaled, &mut lt);
        for (s, v) in scaled.iter_mut().zip(&student_logits[span.clone()]) {
            *s = *v * inv_t;
        }
        log_softmax_into(&scaled, &mut ls);
        let mut kl = T::zero();
        let g = &mut grad[span];
        for v in 0..vocab {
            let pt = lt[v].exp();
            if pt > T::zero() {
                kl += pt * (lt[v] - ls[v]);
            }
            g[v] = (ls[v].exp() - pt) * inv_count * inv_t;
        }
        total += kl;
    }
    Ok(LossGrad {
        loss: total * inv_count,
        grad,
    })
}

/// Normalized feature MSE for one block, over non-padding tokens only.
pub fn squarehead_layer_loss<T: Real>(
    teacher_features: &[T],
    student_features: &[T],
    d_model: usize,
    batch: &TokenBatch,
) -> Result<LossGrad<T>> {
    check_rows("teacher features", teacher_features, d_model, batch)?;
    check_rows("student features", student_features, d_model, batch)?;
    let n = T::of((batch.active_tokens() * d_model) as f64);
    let mut diff_sq = T::zero();
    let mut teacher_sq = T::zero();
    for i in 0..batch.tokens() {
        if batch.is_pad(i) {
            continue;
        }
        let span = i * d_model..(i + 1) * d_model;
        for (t, s) in teacher_features[span.clone()].iter().zip(&student_features[span]) {
            let d = *t - *s;
            diff_sq += d * d;
            teacher_sq += *t * *t;
        }
    }
    let mse_ts = diff_sq / n;
    let mse_t0 = teacher_sq / n;
    if mse_t0.to_f64_lossy() < DEGENERATE_TEACHER_EPS {
        return Err(Error::DegenerateTeacher(mse_t0.to_f64_lossy()));
    }
    let coef = T::of(2.0) / (n * mse_t0);
    let mut grad = vec![T::zero(); student_features.len()];
    for i in 0..batch.tokens() {
        if batch.is_pad(i) {
            continue;
        }
        let span = i * d_model..(i + 1) * d_model;
        for ((g, t), s) in grad[span.clone()]
            .iter_mut()
            .zip(&teacher_features[span.clone()])
            .zip(&student_features[span])
        {
            *g = coef * (*s - *t);
        }
    }
    Ok(LossGrad {
        loss: mse_ts / mse_t0,
        grad,
    })
}

/// Unweighted sum of per-block feature losses.
pub fn squarehead_total<T: Real>(per_layer: &[T]) -> Result<T> {
    if per_layer.is_empty() {
        return Err(Error::invalid("feature loss needs at least one layer"));
    }
    Ok(per_layer.iter().copied().fold(T::zero(), |a, b| a + b))
}

/// Mean per-token Shannon entropy (nats) of the student's predictive distribution.
pub fn predictive_entropy<T: Real>(logits: &[T], vocab: usize, batch: &TokenBatch) -> Result<T> {
    check_rows("student logits", logits, vocab, batch)?;
    let mut logp = vec![T::zero(); vocab];
    let mut total = T::zero();
    for i in 0..batch.tokens() {
        if batch.is_pad(i) {
            continue;
        }
        log_softmax_into(&logits[i * vocab..(i + 1) * vocab], &mut logp);
        let mut h = T::zero();
        for lp in &logp {
            let p = lp.exp();
            if p > T::zero() {
                h -= p * *lp;
            }
        }
        total += h;
    }
    Ok(total / T::of(batch.active_tokens() as f64))
}

/// Softmax probabilities for every row; used by evaluation.
pub fn probabilities<T: Real>(logits: &[T], vocab: usize) -> Vec<T> {
    let mut p = logits.to_vec();
    for row in p.chunks_mut(vocab) {
        softmax_in_place(row);
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossVariant {
    /// Task loss only.
    #[serde(rename = "ce")]
    CrossEntropy,
    /// Task loss plus logit KD.
    #[serde(rename = "kd")]
    StandardKd,
    /// Task loss plus SquareHead feature loss.
    #[serde(rename = "squarehead")]
    SquareHead,
    /// Task loss plus both distillation terms.
    #[serde(rename = "kd+squarehead")]
    KdSquareHead,
}

impl LossVariant {
    pub const STANDARD_VARIANTS: [LossVariant; 3] =
        [LossVariant::CrossEntropy, LossVariant::StandardKd, LossVariant::SquareHead];

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::CrossEntropy => "ce",
            LossVariant::StandardKd => "kd",
            LossVariant::SquareHead => "squarehead",
            LossVariant::KdSquareHead => "kd+squarehead",
        }
    }

    pub fn uses_logit_kd(self) -> bool {
        matches!(self, LossVariant::StandardKd | LossVariant::KdSquareHead)
    }

    pub fn uses_features(self) -> bool {
        matches!(self, LossVariant::SquareHead | LossVariant::KdSquareHead)
    }

    pub fn needs_teacher(self) -> bool {
        self.uses_logit_kd() || self.uses_features()
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ce" | "cross_entropy" | "crossentropy" => Ok(LossVariant::CrossEntropy),
            "kd" | "standard_kd" | "standardkd" => Ok(LossVariant::StandardKd),
            "squarehead" | "sq" | "squarehead_kd" => Ok(LossVariant::SquareHead),
            "kd+squarehead" | "all" => Ok(LossVariant::KdSquareHead),
            other => Err(Error::invalid(format!(
                "unknown loss variant '{other}' (ce|kd|squarehead|kd+squarehead)"
            ))),
        }
    }
}

/// Component losses evaluated for one batch. Distillation parts are present
/// whenever teacher outputs were supplied, even if the variant ignores them.
#[derive(Debug, Clone)]
pub struct LossParts<T> {
    pub task: LossGrad<T>,
    pub logit_kd: Option<LossGrad<T>>,
    pub features: Option<Vec<LossGrad<T>>>,
}

#[derive(Debug, Clone)]
pub struct LossBreakdown<T> {
    pub variant: LossVariant,
    pub task: T,
    pub logit_kd: Option<T>,
    pub feat_per_layer: Vec<T>,
    pub feat_total: Option<T>,
    pub total: T,
    /// d total / d student logits.
    pub grad_logits: Vec<T>,
    /// d total / d student block outputs, one entry per block; empty when
    /// the variant has no feature term.
    pub grad_features: Vec<Vec<T>>,
}

/// Assembles the objective of `variant` from `parts`; gradients add by linearity.
pub fn combined_loss<T: Real>(variant: LossVariant, parts: &LossParts<T>, lambda: T) -> Result<LossBreakdown<T>> {
    let feat_per_layer: Vec<T> = parts
        .features
        .as_ref()
        .map(|f| f.iter().map(|l| l.loss).collect())
        .unwrap_or_default();
    let feat_total = if feat_per_layer.is_empty() {
        None
    } else {
        Some(squarehead_total(&feat_per_layer)?)
    };
    let logit_kd = parts.logit_kd.as_ref().map(|l| l.loss);

    let mut total = parts.task.loss;
    let mut grad_logits = parts.task.grad.clone();
    let mut grad_features = Vec::new();
    if variant.uses_logit_kd() {
        let kd = parts
            .logit_kd
            .as_ref()
            .ok_or(Error::MissingTeacher("logit distillation"))?;
        if kd.grad.len() != grad_logits.len() {
            return Err(Error::shape("logit KD gradient does not match student logits"));
        }
        total += lambda * kd.loss;
        for (g, k) in grad_logits.iter_mut().zip(&kd.grad) {
            *g += lambda * *k;
        }
    }
    if variant.uses_features() {
        let feats = parts
            .features
            .as_ref()
            .filter(|f| !f.is_empty())
            .ok_or(Error::MissingTeacher("SquareHead distillation"))?;
        total += lambda * feat_total.expect("nonempty feature list");
        grad_features = feats
            .iter()
            .map(|l| l.grad.iter().map(|g| lambda * *g).collect())
            .collect();
    }
    Ok(LossBreakdown {
        variant,
        task: parts.task.loss,
        logit_kd,
        feat_per_layer,
        feat_total,
        total,
        grad_logits,
        grad_features,
    })
}

/// Student and (optionally) teacher outputs for one batch.
pub struct ModelOutputs<'a, T> {
    pub logits: &'a [T],
    /// One flat `[tokens x d_model]` map per block.
    pub features: &'a [Vec<T>],
}

/// Evaluates every part the inputs allow, then assembles `variant`.
pub fn compute_loss<T: Real>(
    variant: LossVariant,
    lambda: T,
    student: &ModelOutputs<'_, T>,
    teacher: Option<&ModelOutputs<'_, T>>,
    vocab: usize,
    d_model: usize,
    batch: &TokenBatch,
) -> Result<LossBreakdown<T>> {
    if variant.needs_teacher() && teacher.is_none() {
        return Err(Error::MissingTeacher(variant.name()));
    }
    let task = task_loss(student.logits, vocab, batch)?;
    let (logit_kd, features) = match teacher {
        Some(t) => {
            if t.features.len() != student.features.len() {
                return Err(Error::shape("teacher and student have different block counts"));
            }
            let kd = logit_kd_loss(t.logits, student.logits, vocab, batch)?;
            let feats = if variant.uses_features() {
                Some(
                    t.features
                        .iter()
                        .zip(student.features)
                        .map(|(ft, fs)| squarehead_layer_loss(ft, fs, d_model, batch))
                        .collect::<Result<Vec<_>>>()?,
                )
            } else {
                None
            };
            (Some(kd), feats)
        }
        None => (None, None),
    };
    combined_loss(variant, &LossParts { task, logit_kd, features }, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn batch_one(target: u32) -> TokenBatch {
        TokenBatch::new(1, 1, vec![target], vec![false]).unwrap()
    }

    fn random_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gaussian(0.0, scale)).collect()
    }

    fn random_batch(rng: &mut Rng, b: usize, s: usize, vocab: usize, pads: usize) -> TokenBatch {
        let n = b * s;
        let targets = (0..n).map(|_| rng.below(vocab as u64) as u32).collect();
        let mut padding = vec![false; n];
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        for &i in idx.iter().take(pads) {
            padding[i] = true;
        }
        TokenBatch::new(b, s, targets, padding).unwrap()
    }

    #[test]
    fn all_padding_rejected() {
        assert!(matches!(
            TokenBatch::new(1, 2, vec![0, 0], vec![true, true]),
            Err(Error::AllPadding)
        ));
    }

    #[test]
    fn task_loss_confident_and_uniform() {
        let logits = vec![0.0f64, 0.0, 200.0, 0.0];
        let l = task_loss(&logits, 4, &batch_one(2)).unwrap();
        assert!(l.loss.abs() < 1e-12);
        let u = task_loss(&[0.0f64; 5], 5, &batch_one(3)).unwrap();
        assert!((u.loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn task_loss_matches_naive_loop() {
        let mut rng = Rng::new(1);
        let (b, s, v) = (2, 3, 5);
        let batch = random_batch(&mut rng, b, s, v, 1);
        let logits = random_vec(&mut rng, b * s * v, 1.0);
        let got = task_loss(&logits, v, &batch).unwrap().loss;
        let mut sum = 0.0;
        let mut count = 0.0;
        for i in 0..b * s {
            if batch.is_pad(i) {
                continue;
            }
            let row = &logits[i * v..(i + 1) * v];
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            sum += -(row[batch.targets()[i] as usize].exp() / z).ln();
            count += 1.0;
        }
        assert!((got - sum / count).abs() < 1e-6);
    }

    #[test]
    fn kd_identity_and_closed_form() {
        let mut rng = Rng::new(2);
        let batch = random_batch(&mut rng, 2, 4, 6, 2);
        let logits = random_vec(&mut rng, 48, 2.0);
        let same = logit_kd_loss(&logits, &logits, 6, &batch).unwrap();
        assert!(same.loss.abs() < 1e-15);
        assert!(same.grad.iter().all(|g| g.abs() < 1e-15));

        // teacher (0.75, 0.25), student uniform
        let teacher = vec![3f64.ln(), 0.0];
        let student = vec![0.0f64, 0.0];
        let l = logit_kd_loss(&teacher, &student, 2, &batch_one(0)).unwrap();
        let expect = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((l.loss - expect).abs() < 1e-12);
        assert!((expect - 0.13081).abs() < 1e-5);
    }

    #[test]
    fn kd_rejects_non_finite() {
        let batch = batch_one(0);
        assert!(matches!(
            logit_kd_loss(&[f64::NAN, 0.0], &[0.0, 0.0], 2, &batch),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn temperature_one_is_default() {
        let mut rng = Rng::new(3);
        let batch = random_batch(&mut rng, 1, 4, 5, 1);
        let t = random_vec(&mut rng, 20, 1.0);
        let s = random_vec(&mut rng, 20, 1.0);
        let a = logit_kd_loss(&t, &s, 5, &batch).unwrap();
        let b = logit_kd_loss_with_temperature(&t, &s, 5, &batch, 1.0).unwrap();
        assert_eq!(a, b);
        let hot = logit_kd_loss_with_temperature(&t, &s, 5, &batch, 4.0).unwrap();
        assert!(hot.loss < a.loss);
    }

    #[test]
    fn squarehead_identities() {
        let mut rng = Rng::new(4);
        let batch = random_batch(&mut rng, 2, 3, 2, 1);
        let ft = random_vec(&mut rng, 24, 1.0);
        assert_eq!(squarehead_layer_loss(&ft, &ft, 4, &batch).unwrap().loss, 0.0);
        let zero = vec![0.0; 24];
        assert!((squarehead_layer_loss(&ft, &zero, 4, &batch).unwrap().loss - 1.0).abs() < 1e-15);
    }

    #[test]
    fn squarehead_matches_masked_double_loop() {
        let mut rng = Rng::new(5);
        let (b, s, d) = (2, 4, 8);
        let batch = random_batch(&mut rng, b, s, 3, 3);
        let ft = random_vec(&mut rng, b * s * d, 1.0);
        let fs = random_vec(&mut rng, b * s * d, 1.0);
        let got = squarehead_layer_loss(&ft, &fs, d, &batch).unwrap().loss;
        let (mut num, mut den, mut n) = (0.0, 0.0, 0.0);
        for bi in 0..b {
            for si in 0..s {
                let tok = bi * s + si;
                if batch.is_pad(tok) {
                    continue;
                }
                for k in 0..d {
                    let idx = (bi * s + si) * d + k;
                    num += (ft[idx] - fs[idx]).powi(2);
                    den += ft[idx].powi(2);
                    n += 1.0;
                }
            }
        }
        assert!((got - (num / n) / (den / n)).abs() < 1e-6);
    }

    #[test]
    fn squarehead_degenerate_teacher() {
        let batch = TokenBatch::new(1, 2, vec![0, 0], vec![false, true]).unwrap();
        // nonzero teacher values only at the padded position
        let ft = vec![0.0, 0.0, 5.0, 5.0];
        let fs = vec![1.0, 1.0, 1.0, 1.0];
        assert!(matches!(
            squarehead_layer_loss(&ft, &fs, 2, &batch),
            Err(Error::DegenerateTeacher(_))
        ));
    }

    #[test]
    fn squarehead_total_sums() {
        assert_eq!(squarehead_total(&[0.0f64, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(squarehead_total(&[1.0f64]).unwrap(), 1.0);
        assert!((squarehead_total(&[0.2f64, 0.5, 0.3]).unwrap() - 1.0).abs() < 1e-15);
        assert!(squarehead_total::<f64>(&[]).is_err());
    }

    #[test]
    fn entropy_cases() {
        let onehot = vec![0.0f64, 800.0, 0.0];
        assert!(predictive_entropy(&onehot, 3, &batch_one(0)).unwrap().abs() < 1e-12);
        let uniform = vec![0.0f64; 10];
        assert!((predictive_entropy(&uniform, 10, &batch_one(0)).unwrap() - 10f64.ln()).abs() < 1e-12);
        let p = vec![0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()];
        let h = predictive_entropy(&p, 3, &batch_one(0)).unwrap();
        assert!((h - 1.5 * 2f64.ln()).abs() < 1e-12);
        assert!((h - 1.0397).abs() < 1e-4);
    }

    fn parts(task: f64, kd: Option<f64>, feats: Option<Vec<f64>>) -> LossParts<f64> {
        LossParts {
            task: LossGrad { loss: task, grad: vec![1.0, 2.0] },
            logit_kd: kd.map(|l| LossGrad { loss: l, grad: vec![10.0, 20.0] }),
            features: feats.map(|f| f.into_iter().map(|l| LossGrad { loss: l, grad: vec![3.0] }).collect()),
        }
    }

    #[test]
    fn combined_variants() {
        let p = parts(0.4, Some(0.7), Some(vec![0.6]));
        let sh = combined_loss(LossVariant::SquareHead, &p, 1.0).unwrap();
        assert!((sh.total - 1.0).abs() < 1e-15);
        assert_eq!(sh.grad_logits, vec![1.0, 2.0]);
        assert_eq!(sh.grad_features, vec![vec![3.0]]);

        let ce = combined_loss(LossVariant::CrossEntropy, &p, 1.0).unwrap();
        let kd0 = combined_loss(LossVariant::StandardKd, &p, 0.0).unwrap();
        assert_eq!(ce.total, kd0.total);
        assert_eq!(ce.grad_logits, kd0.grad_logits);

        let kd = combined_loss(LossVariant::StandardKd, &p, 0.5).unwrap();
        assert!((kd.total - 0.75).abs() < 1e-15);
        assert_eq!(kd.grad_logits, vec![6.0, 12.0]);

        let no_teacher = parts(0.4, None, None);
        assert!(matches!(
            combined_loss(LossVariant::StandardKd, &no_teacher, 1.0),
            Err(Error::MissingTeacher(_))
        ));
        assert!(matches!(
            combined_loss(LossVariant::SquareHead, &no_teacher, 1.0),
            Err(Error::MissingTeacher(_))
        ));
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in [
            LossVariant::CrossEntropy,
            LossVariant::StandardKd,
            LossVariant::SquareHead,
            LossVariant::KdSquareHead,
        ] {
            assert_eq!(v.name().parse::<LossVariant>().unwrap(), v);
        }
        assert!("mse".parse::<LossVariant>().is_err());
    }
}
