//! Accuracy-vs-sparsity recovery experiment: copy the dense teacher, prune,
//! fine-tune with each loss variant, and record test metrics.

use std::io::Write;

use serde::Serialize;

use super::train::{evaluate, train, TrainConfig, TrainRun};
use super::{Split, SyntheticTask, TaskData, TinyModel, TinyModelConfig};
use crate::distill::LossVariant;
use crate::error::{Error, Result};
use crate::par;
use crate::pruning::{run_schedule, MagnitudePruner, SparsitySchedule};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PruneMode {
    /// Prune straight to the target, then fine-tune.
    OneShot,
    /// Prune in `stages` equal increments up to the target, fine-tuning
    /// after each.
    Gradual { stages: usize },
}

impl PruneMode {
    /// Levels visited on the way to `target`. Empty for a dense run.
    pub fn levels(&self, target: f64) -> Vec<f64> {
        if target <= 0.0 {
            return Vec::new();
        }
        match *self {
            PruneMode::OneShot => vec![target],
            PruneMode::Gradual { stages } => {
                let k = stages.max(1);
                (1..=k).map(|i| target * i as f64 / k as f64).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub model: TinyModelConfig,
    pub task: SyntheticTask,
    pub teacher_seed: u64,
    pub teacher: TrainConfig,
    /// Template for every student run; `variant` and `seed` are overridden.
    pub finetune: TrainConfig,
    /// Students fine-tune on the first this-many training sequences.
    pub finetune_train_size: Option<usize>,
    pub sparsities: Vec<f64>,
    pub variants: Vec<LossVariant>,
    pub seeds: Vec<u64>,
    pub prune_mode: PruneMode,
    /// Gradual mode: restart the warmup/decay schedule at every level.
    /// Otherwise the levels share one linear decay from `finetune.lr`.
    pub lr_restart: bool,
    pub prune_head: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            model: TinyModelConfig::default(),
            task: SyntheticTask::default(),
            teacher_seed: 7,
            teacher: TrainConfig {
                epochs: 10,
                lr: 0.5,
                warmup_steps: 20,
                batch_size: 32,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                lambda: 1.0,
                epochs: 10,
                lr: 0.6,
                warmup_steps: 10,
                batch_size: 32,
                ..TrainConfig::default()
            },
            finetune_train_size: Some(1024),
            sparsities: vec![0.75, 0.9],
            variants: LossVariant::STANDARD_VARIANTS.to_vec(),
            seeds: vec![0, 1, 2],
            prune_mode: PruneMode::OneShot,
            lr_restart: true,
            prune_head: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.task.validate()?;
        if self.task.vocab != self.model.vocab || self.task.seq != self.model.seq {
            return Err(Error::invalid("task vocab/seq must match the model"));
        }
        if let Some(bad) = self.sparsities.iter().find(|s| !(0.0..1.0).contains(*s)) {
            return Err(Error::invalid(format!("sparsity {bad} outside [0, 1)")));
        }
        if self.sparsities.is_empty() || self.variants.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("sparsities, variants and seeds must be nonempty"));
        }
        if let PruneMode::Gradual { stages: 0 } = self.prune_mode {
            return Err(Error::invalid("gradual pruning needs at least one stage"));
        }
        Ok(())
    }
}

/// Trains the dense teacher with cross-entropy from a fresh initialization.
pub fn train_teacher(spec: &ExperimentSpec, data: &TaskData) -> Result<(TinyModel, TrainRun)> {
    let mut model = TinyModel::init(spec.model, &mut Rng::new(spec.teacher_seed))?;
    model.set_head_prunable(spec.prune_head);
    let cfg = TrainConfig {
        variant: LossVariant::CrossEntropy,
        ..spec.teacher.clone()
    };
    let run = train(&mut model, &data.train, &cfg, None, Some(&data.val))?;
    Ok((model, run))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRow {
    pub sparsity: f64,
    pub variant: LossVariant,
    pub seed: u64,
    pub accuracy: f64,
    pub entropy: f64,
    pub diverged: bool,
    /// Fraction of zeros over the prunable weights after fine-tuning.
    pub measured_sparsity: f64,
    /// Test accuracy with every linear weight fake-quantized to INT8.
    pub int8_accuracy: f64,
    pub error: Option<String>,
    #[serde(skip)]
    pub history: Option<TrainRun>,
}

impl RunRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub sparsity: f64,
    pub variant: LossVariant,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_entropy: f64,
    pub mean_int8_accuracy: f64,
    /// Mean INT8 minus FP32 accuracy.
    pub mean_int8_delta: f64,
    pub diverged_runs: usize,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub teacher_val_accuracy: f64,
    pub teacher_test_accuracy: f64,
    pub teacher_test_entropy: f64,
    pub teacher_int8_accuracy: f64,
    pub rows: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn any_failure(&self) -> bool {
        self.rows.iter().any(RunRow::failed)
    }

    pub fn summary_for(&self, sparsity: f64, variant: LossVariant) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|s| s.sparsity == sparsity && s.variant == variant)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Aggregates over seeds, keeping (sparsity, variant) in first-seen order.
/// Failed runs are counted but excluded from the means.
pub fn summarize_rows(rows: &[RunRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(f64, LossVariant)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.sparsity, r.variant)) {
            keys.push((r.sparsity, r.variant));
        }
    }
    keys.into_iter()
        .map(|(s, v)| {
            let group: Vec<&RunRow> = rows.iter().filter(|r| r.sparsity == s && r.variant == v).collect();
            let ok: Vec<&&RunRow> = group.iter().filter(|r| !r.failed()).collect();
            let acc: Vec<f64> = ok.iter().map(|r| r.accuracy).collect();
            let ent: Vec<f64> = ok.iter().map(|r| r.entropy).collect();
            let q: Vec<f64> = ok.iter().map(|r| r.int8_accuracy).collect();
            let d: Vec<f64> = ok.iter().map(|r| r.int8_accuracy - r.accuracy).collect();
            SummaryRow {
                sparsity: s,
                variant: v,
                runs: group.len(),
                mean_accuracy: mean(&acc),
                std_accuracy: std_dev(&acc),
                mean_entropy: mean(&ent),
                mean_int8_accuracy: mean(&q),
                mean_int8_delta: mean(&d),
                diverged_runs: group.iter().filter(|r| r.diverged).count(),
                failed_runs: group.len() - ok.len(),
            }
        })
        .collect()
}

fn append_run(total: &mut Option<TrainRun>, part: TrainRun) {
    match total {
        None => *total = Some(part),
        Some(t) => {
            let offset = t.steps.len();
            let epoch_offset = t.epochs.len();
            t.steps.extend(part.steps.into_iter().map(|mut s| {
                s.step += offset;
                s
            }));
            t.epochs.extend(part.epochs.into_iter().map(|mut e| {
                e.epoch += epoch_offset;
                e
            }));
            t.diverged |= part.diverged;
            if t.diverged_at.is_none() {
                t.diverged_at = part.diverged_at.map(|k| k + offset);
            }
            t.sparsity = part.sparsity;
        }
    }
}

fn student_run(
    spec: &ExperimentSpec,
    teacher: &TinyModel,
    train_split: &Split,
    data: &TaskData,
    sparsity: f64,
    variant: LossVariant,
    seed: u64,
) -> Result<(TinyModel, TrainRun)> {
    let mut student = teacher.clone();
    student.set_head_prunable(spec.prune_head);
    let cfg = TrainConfig {
        variant,
        seed,
        ..spec.finetune.clone()
    };
    let levels = spec.prune_mode.levels(sparsity);
    let mut history: Option<TrainRun> = None;
    if levels.is_empty() {
        history = Some(train(&mut student, train_split, &cfg, Some(teacher), Some(&data.val))?);
    } else {
        let k = levels.len();
        let schedule = SparsitySchedule::new(levels, cfg.epochs)?;
        let mut halted = false;
        run_schedule(&mut student, &schedule, &MagnitudePruner, |m, i, _| {
            if halted {
                return Ok(());
            }
            let mut level_cfg = TrainConfig {
                seed: cfg.seed.wrapping_add(i as u64 * 0x9E37_79B9),
                ..cfg.clone()
            };
            if !spec.lr_restart {
                let left = (k - i) as f32;
                level_cfg.lr = cfg.lr * left / k as f32;
                level_cfg.final_lr_fraction = (left - 1.0) / left;
                if i > 0 {
                    level_cfg.warmup_steps = 0;
                }
            }
            let run = train(m, train_split, &level_cfg, Some(teacher), Some(&data.val))?;
            halted = run.diverged;
            append_run(&mut history, run);
            Ok(())
        })?;
    }
    let mut run = history.ok_or_else(|| Error::invalid("no fine-tuning happened"))?;
    run.seed = seed;
    run.sparsity = student.prunable_sparsity();
    Ok((student, run))
}

/// Every (sparsity, variant, seed) combination, in that nesting order. Runs
/// are independent and may execute in parallel; a failing run is recorded
/// in its row and does not stop the others.
pub fn run_recovery_experiment(spec: &ExperimentSpec, teacher: &TinyModel, data: &TaskData) -> Result<ExperimentReport> {
    spec.validate()?;
    if teacher.config() != &spec.model {
        return Err(Error::shape("teacher configuration differs from the experiment model"));
    }
    let train_split = match spec.finetune_train_size {
        Some(n) if n < data.train.len() => data.train.head(n)?,
        _ => data.train.clone(),
    };
    let teacher_val = evaluate(teacher, &data.val)?;
    let teacher_test = evaluate(teacher, &data.test)?;
    let teacher_q = evaluate(&teacher.fake_quantized(), &data.test)?;

    let mut jobs = Vec::new();
    for &s in &spec.sparsities {
        for &v in &spec.variants {
            for &seed in &spec.seeds {
                jobs.push((s, v, seed));
            }
        }
    }
    let rows = par::map(&jobs, |&(sparsity, variant, seed)| {
        let outcome = student_run(spec, teacher, &train_split, data, sparsity, variant, seed).and_then(|(m, run)| {
            let fp = evaluate(&m, &data.test)?;
            let q = evaluate(&m.fake_quantized(), &data.test)?;
            Ok((m, run, fp, q))
        });
        match outcome {
            Ok((m, run, fp, q)) => RunRow {
                sparsity,
                variant,
                seed,
                accuracy: fp.accuracy,
                entropy: fp.entropy,
                diverged: run.diverged,
                measured_sparsity: m.prunable_sparsity(),
                int8_accuracy: q.accuracy,
                error: None,
                history: Some(run),
            },
            Err(e) => RunRow {
                sparsity,
                variant,
                seed,
                accuracy: f64::NAN,
                entropy: f64::NAN,
                diverged: false,
                measured_sparsity: f64::NAN,
                int8_accuracy: f64::NAN,
                error: Some(e.to_string()),
                history: None,
            },
        }
    });
    let summary = summarize_rows(&rows);
    Ok(ExperimentReport {
        teacher_val_accuracy: teacher_val.accuracy,
        teacher_test_accuracy: teacher_test.accuracy,
        teacher_test_entropy: teacher_test.entropy,
        teacher_int8_accuracy: teacher_q.accuracy,
        rows,
        summary,
    })
}

fn fmt(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.6}")
    }
}

pub const ACCURACY_CSV_COLUMNS: [&str; 6] = ["sparsity", "variant", "seed", "accuracy", "entropy", "diverged"];

pub fn write_accuracy_csv<W: Write>(rows: &[RunRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ACCURACY_CSV_COLUMNS)?;
    for r in rows {
        w.write_record([
            format!("{:.4}", r.sparsity),
            r.variant.name().to_string(),
            r.seed.to_string(),
            fmt(r.accuracy),
            fmt(r.entropy),
            r.diverged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const QUANT_CSV_COLUMNS: [&str; 6] = ["sparsity", "variant", "seed", "fp32_accuracy", "int8_accuracy", "delta"];

/// FP32 vs simulated INT8 test accuracy per run.
pub fn write_quant_csv<W: Write>(rows: &[RunRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(QUANT_CSV_COLUMNS)?;
    for r in rows {
        w.write_record([
            format!("{:.4}", r.sparsity),
            r.variant.name().to_string(),
            r.seed.to_string(),
            fmt(r.accuracy),
            fmt(r.int8_accuracy),
            fmt(r.int8_accuracy - r.accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const PLOT_CSV_COLUMNS: [&str; 5] = ["sparsity", "variant", "seed", "metric", "value"];

/// Long format: one line per (run, metric).
pub fn write_plot_csv<W: Write>(rows: &[RunRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PLOT_CSV_COLUMNS)?;
    for r in rows {
        let metrics = [
            ("accuracy", r.accuracy),
            ("entropy", r.entropy),
            ("int8_accuracy", r.int8_accuracy),
            ("measured_sparsity", r.measured_sparsity),
        ];
        for (name, value) in metrics {
            w.write_record([
                format!("{:.4}", r.sparsity),
                r.variant.name().to_string(),
                r.seed.to_string(),
                name.to_string(),
                fmt(value),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
