use std::io::Write;

use serde::Serialize;

use super::{Split, TinyModel};
use crate::distill::{compute_loss, predictive_entropy, LossVariant, ModelOutputs};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// A step is divergent when its loss exceeds this multiple of the running median.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// Number of preceding steps in the running median.
pub const DIVERGENCE_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub variant: LossVariant,
    pub lambda: f32,
    pub epochs: usize,
    pub lr: f32,
    pub warmup_steps: usize,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// Learning rate reached at the last step, as a fraction of `lr`.
    pub final_lr_fraction: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: LossVariant::CrossEntropy,
            lambda: 1.0,
            epochs: 20,
            lr: 0.1,
            warmup_steps: 20,
            weight_decay: 0.0,
            batch_size: 32,
            seed: 0,
            final_lr_fraction: 0.0,
        }
    }
}

/// Linear warmup to `base`, then linear decay to zero at `total` steps.
pub fn learning_rate(step: usize, total: usize, warmup: usize, base: f32) -> f32 {
    learning_rate_to(step, total, warmup, base, 0.0)
}

/// As [`learning_rate`], but decaying to `base * final_fraction`.
pub fn learning_rate_to(step: usize, total: usize, warmup: usize, base: f32, final_fraction: f32) -> f32 {
    if step < warmup {
        base * (step + 1) as f32 / warmup as f32
    } else if total <= warmup {
        base
    } else {
        let left = (total - step) as f32 / (total - warmup) as f32;
        base * (final_fraction + (1.0 - final_fraction) * left)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub variant: LossVariant,
    pub task: f64,
    pub logit_kd: Option<f64>,
    pub feat_total: Option<f64>,
    pub total: f64,
    pub entropy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val_accuracy: f64,
    pub val_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRun {
    pub seed: u64,
    pub variant: LossVariant,
    pub sparsity: f64,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub diverged: bool,
    pub diverged_at: Option<usize>,
}

impl TrainRun {
    pub fn loss_history(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.total).collect()
    }
}

/// Streaming form of [`detect_divergence`].
#[derive(Debug, Clone, Default)]
pub struct DivergenceDetector {
    history: Vec<f64>,
}

impl DivergenceDetector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `loss`; true if this step is divergent.
    pub fn push(&mut self, loss: f64) -> bool {
        let k = self.history.len();
        let flagged = if !loss.is_finite() {
            true
        } else if k >= DIVERGENCE_WINDOW {
            let window = &self.history[k - DIVERGENCE_WINDOW..];
            loss > DIVERGENCE_FACTOR * crate::bench::median(window)
        } else {
            false
        };
        self.history.push(loss);
        flagged
    }
}

/// First step whose loss is non-finite or exceeds 10x the median of the 20
/// steps before it. Spikes can only be flagged once 20 steps of history exist.
pub fn detect_divergence(history: &[f64]) -> Option<usize> {
    let mut det = DivergenceDetector::new();
    history.iter().position(|&l| det.push(l))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub entropy: f64,
    pub tokens: usize,
}

const EVAL_CHUNK: usize = 256;

/// Argmax accuracy and mean predictive entropy over non-padding tokens.
pub fn evaluate(model: &TinyModel, split: &Split) -> Result<EvalResult> {
    if split.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let v = model.config().vocab;
    let (mut correct, mut tokens, mut entropy_sum) = (0usize, 0usize, 0.0f64);
    let idx: Vec<usize> = (0..split.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let part = split.select(chunk)?;
        let pass = model.forward(part.inputs(), part.seq())?;
        let b = part.batch();
        for i in 0..b.tokens() {
            if b.is_pad(i) {
                continue;
            }
            let row = &pass.logits[i * v..(i + 1) * v];
            let mut best = 0;
            for j in 1..v {
                if row[j] > row[best] {
                    best = j;
                }
            }
            if best == b.targets()[i] as usize {
                correct += 1;
            }
        }
        let h = predictive_entropy(&pass.logits, v, b)?;
        entropy_sum += h as f64 * b.active_tokens() as f64;
        tokens += b.active_tokens();
    }
    Ok(EvalResult {
        accuracy: correct as f64 / tokens as f64,
        entropy: entropy_sum / tokens as f64,
        tokens,
    })
}

/// Minibatch SGD on `data`. Stops early, without error, when the divergence
/// detector fires or an update leaves non-finite weights; the model then
/// holds the weights behind the last unflagged loss.
pub fn train(
    model: &mut TinyModel,
    data: &Split,
    cfg: &TrainConfig,
    teacher: Option<&TinyModel>,
    eval: Option<&Split>,
) -> Result<TrainRun> {
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    if !(cfg.lr >= 0.0) || !(cfg.weight_decay >= 0.0) {
        return Err(Error::invalid("lr and weight_decay must be nonnegative"));
    }
    if !(0.0..=1.0).contains(&cfg.final_lr_fraction) {
        return Err(Error::invalid("final_lr_fraction must lie in [0, 1]"));
    }
    if cfg.variant.needs_teacher() && teacher.is_none() {
        return Err(Error::MissingTeacher(cfg.variant.name()));
    }
    if let Some(t) = teacher {
        if t.config() != model.config() {
            return Err(Error::shape("teacher and student configurations differ"));
        }
    }
    let teacher = teacher.filter(|_| cfg.variant.needs_teacher());
    let mc = *model.config();
    let mut rng = Rng::new(cfg.seed);
    let n = data.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut run = TrainRun {
        seed: cfg.seed,
        variant: cfg.variant,
        sparsity: model.prunable_sparsity(),
        steps: Vec::with_capacity(total_steps),
        epochs: Vec::with_capacity(cfg.epochs),
        diverged: false,
        diverged_at: None,
    };
    let mut detector = DivergenceDetector::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    // weights that produced the last unflagged loss
    let mut last_good = None;
    'epochs: for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let mb = data.select(chunk)?;
            let lr = learning_rate_to(step, total_steps, cfg.warmup_steps, cfg.lr, cfg.final_lr_fraction);
            let pass = model.forward(mb.inputs(), mb.seq())?;
            let tpass = teacher.map(|t| t.forward(mb.inputs(), mb.seq())).transpose()?;
            let student_out = ModelOutputs {
                logits: &pass.logits,
                features: pass.features(),
            };
            let teacher_out = tpass.as_ref().map(|p| ModelOutputs {
                logits: &p.logits,
                features: p.features(),
            });
            let loss = match compute_loss(
                cfg.variant,
                cfg.lambda,
                &student_out,
                teacher_out.as_ref(),
                mc.vocab,
                mc.d_model,
                mb.batch(),
            ) {
                Ok(l) if l.total.is_finite() => l,
                Ok(_) | Err(Error::NonFinite(_)) => {
                    run.steps.push(StepRecord {
                        step,
                        variant: cfg.variant,
                        task: f64::NAN,
                        logit_kd: None,
                        feat_total: None,
                        total: f64::NAN,
                        entropy: f64::NAN,
                        lr: lr as f64,
                    });
                    detector.push(f64::NAN);
                    run.diverged = true;
                    run.diverged_at = Some(step);
                    if let Some(p) = last_good.take() {
                        model.params = p;
                    }
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let entropy = predictive_entropy(&pass.logits, mc.vocab, mb.batch())? as f64;
            run.steps.push(StepRecord {
                step,
                variant: cfg.variant,
                task: loss.task as f64,
                logit_kd: loss.logit_kd.map(f64::from),
                feat_total: loss.feat_total.map(f64::from),
                total: loss.total as f64,
                entropy,
                lr: lr as f64,
            });
            if detector.push(loss.total as f64) {
                run.diverged = true;
                run.diverged_at = Some(step);
                if let Some(p) = last_good.take() {
                    model.params = p;
                }
                break 'epochs;
            }
            let grads = model.backward(&pass, &loss.grad_logits, &loss.grad_features)?;
            let before = model.params.clone();
            model.sgd_step(&grads, lr, cfg.weight_decay)?;
            if !model.is_finite() {
                model.params = before;
                run.diverged = true;
                run.diverged_at = Some(step);
                break 'epochs;
            }
            last_good = Some(before);
            step += 1;
        }
        if let Some(ev) = eval {
            let r = evaluate(model, ev)?;
            run.epochs.push(EpochRecord {
                epoch,
                val_accuracy: r.accuracy,
                val_entropy: r.entropy,
            });
        }
    }
    Ok(run)
}

pub const STEP_CSV_COLUMNS: [&str; 7] = ["step", "variant", "task", "logit_kd", "feat_total", "total", "entropy"];

/// One row per step: step, variant, task, logit_kd, feat_total, total, entropy.
/// Terms that were not evaluated are left empty.
pub fn write_steps_csv<W: Write>(run: &TrainRun, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STEP_CSV_COLUMNS)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for s in &run.steps {
        w.write_record([
            s.step.to_string(),
            s.variant.name().to_string(),
            format!("{:.6}", s.task),
            opt(s.logit_kd),
            opt(s.feat_total),
            format!("{:.6}", s.total),
            format!("{:.6}", s.entropy),
        ])?;
    }
    w.flush()?;
    Ok(())
}
