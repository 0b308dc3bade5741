//! Flat `key = value` experiment configuration.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! # comment            (also allowed after a value)
//! key = value
//! list_key = a, b, c
//! ```
//!
//! Keys are case-sensitive, may appear at most once, and must be known.
//! Relative paths are resolved against the directory holding the file.
//! Missing keys take the defaults listed by [`ExperimentConfig::effective`].

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bench::BenchConfig;
use crate::distill::LossVariant;
use crate::error::{Error, Result};
use crate::model::{ExperimentSpec, PruneMode};
use crate::sparse::ValueWidth;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSpec,
    pub bench: BenchConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentSpec::default(),
            bench: BenchConfig::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse '{}': {e}", v.trim())))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|item| parse_one(key, item)).collect()
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn parse_shape(key: &str, v: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("{key}: expected ROWSxCOLS, got '{}'", v.trim()));
    let (r, c) = v.trim().split_once(['x', 'X']).ok_or_else(bad)?;
    let rows = r.trim().parse().map_err(|_| bad())?;
    let cols = c.trim().parse().map_err(|_| bad())?;
    Ok((rows, cols))
}

fn parse_prune_mode(key: &str, v: &str, stages: usize) -> Result<PruneMode> {
    match v.trim() {
        "oneshot" | "one-shot" | "one_shot" => Ok(PruneMode::OneShot),
        "gradual" => Ok(PruneMode::Gradual { stages }),
        other => Err(Error::Config(format!("{key}: expected oneshot or gradual, got '{other}'"))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses `text`, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let mut prune_mode: Option<(usize, String)> = None;
        let mut stages = 3usize;
        cfg.output_dir = base.join(&cfg.output_dir);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {lineno}: expected 'key = value'")))?;
            let key = key.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("line {lineno}: duplicate key '{key}'")));
            }
            seen.push(key.to_string());
            let at = |e: Error| match e {
                Error::Config(m) => Error::Config(format!("line {lineno}: {m}")),
                other => other,
            };
            match key {
                "prune_mode" => prune_mode = Some((lineno, value.to_string())),
                "gradual_stages" => stages = parse_one(key, value).map_err(at)?,
                "output_dir" => {
                    let p = PathBuf::from(value.trim());
                    cfg.output_dir = if p.is_absolute() { p } else { base.join(p) };
                }
                _ => cfg.set(key, value).map_err(at)?,
            }
        }
        cfg.experiment.prune_mode = match prune_mode {
            Some((lineno, v)) => parse_prune_mode("prune_mode", &v, stages)
                .map_err(|e| Error::Config(format!("line {lineno}: {e}")))?,
            None if seen.iter().any(|k| k == "gradual_stages") => {
                return Err(Error::Config("gradual_stages requires prune_mode = gradual".into()))
            }
            None => PruneMode::OneShot,
        };
        cfg.experiment.task.vocab = cfg.experiment.model.vocab;
        cfg.experiment.task.seq = cfg.experiment.model.seq;
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let e = &mut self.experiment;
        let b = &mut self.bench;
        match key {
            "seeds" => e.seeds = parse_list(key, v)?,
            "teacher_seed" => e.teacher_seed = parse_one(key, v)?,
            "vocab" => e.model.vocab = parse_one(key, v)?,
            "d_model" => e.model.d_model = parse_one(key, v)?,
            "blocks" => e.model.blocks = parse_one(key, v)?,
            "seq" => e.model.seq = parse_one(key, v)?,
            "hidden_mult" => e.model.hidden_mult = parse_one(key, v)?,
            "task_seed" => e.task.seed = parse_one(key, v)?,
            "train_size" => e.task.train_size = parse_one(key, v)?,
            "val_size" => e.task.val_size = parse_one(key, v)?,
            "test_size" => e.task.test_size = parse_one(key, v)?,
            "min_len" => e.task.min_len = parse_one(key, v)?,
            "sparsities" => e.sparsities = parse_list(key, v)?,
            "variants" => e.variants = parse_list::<LossVariant>(key, v)?,
            "prune_head" => e.prune_head = parse_one(key, v)?,
            "lr_restart" => e.lr_restart = parse_one(key, v)?,
            "lambda" => e.finetune.lambda = parse_one(key, v)?,
            "lr" => e.finetune.lr = parse_one(key, v)?,
            "epochs" => e.finetune.epochs = parse_one(key, v)?,
            "warmup_steps" => e.finetune.warmup_steps = parse_one(key, v)?,
            "weight_decay" => e.finetune.weight_decay = parse_one(key, v)?,
            "batch_size" => e.finetune.batch_size = parse_one(key, v)?,
            "finetune_train_size" => {
                let n: usize = parse_one(key, v)?;
                e.finetune_train_size = (n > 0).then_some(n);
            }
            "teacher_lr" => e.teacher.lr = parse_one(key, v)?,
            "teacher_epochs" => e.teacher.epochs = parse_one(key, v)?,
            "teacher_warmup_steps" => e.teacher.warmup_steps = parse_one(key, v)?,
            "teacher_weight_decay" => e.teacher.weight_decay = parse_one(key, v)?,
            "teacher_batch_size" => e.teacher.batch_size = parse_one(key, v)?,
            "bench_shape" => (b.rows, b.cols) = parse_shape(key, v)?,
            "bench_sparsities" => b.sparsities = parse_list(key, v)?,
            "bench_width" => b.width = parse_one::<ValueWidth>(key, v)?,
            "bench_reps" => b.reps = parse_one(key, v)?,
            "bench_warmup" => b.warmup = parse_one(key, v)?,
            "bench_threads" => b.threads = parse_one(key, v)?,
            "bench_rounds" => b.rounds = parse_one(key, v)?,
            "bench_seed" => b.seed = parse_one(key, v)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let t = &self.experiment;
        if t.finetune.batch_size == 0 || t.teacher.batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        let b = &self.bench;
        if b.rows == 0 || b.cols == 0 || b.reps == 0 || b.rounds == 0 {
            return Err(Error::Config("bench shape, reps and rounds must be positive".into()));
        }
        if let Some(bad) = b.sparsities.iter().find(|s| !(0.0..1.0).contains(*s)) {
            return Err(Error::Config(format!("bench sparsity {bad} outside [0, 1)")));
        }
        Ok(())
    }

    /// Every key with its effective value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let e = &self.experiment;
        let b = &self.bench;
        let (mode, stages) = match e.prune_mode {
            PruneMode::OneShot => ("oneshot", None),
            PruneMode::Gradual { stages } => ("gradual", Some(stages)),
        };
        let mut out = vec![
            ("seeds", join(&e.seeds)),
            ("teacher_seed", e.teacher_seed.to_string()),
            ("vocab", e.model.vocab.to_string()),
            ("d_model", e.model.d_model.to_string()),
            ("blocks", e.model.blocks.to_string()),
            ("seq", e.model.seq.to_string()),
            ("hidden_mult", e.model.hidden_mult.to_string()),
            ("task_seed", e.task.seed.to_string()),
            ("train_size", e.task.train_size.to_string()),
            ("val_size", e.task.val_size.to_string()),
            ("test_size", e.task.test_size.to_string()),
            ("min_len", e.task.min_len.to_string()),
            ("sparsities", join(&e.sparsities)),
            ("variants", join(&e.variants)),
            ("prune_mode", mode.to_string()),
        ];
        if let Some(s) = stages {
            out.push(("gradual_stages", s.to_string()));
        }
        out.extend([
            ("prune_head", e.prune_head.to_string()),
            ("lr_restart", e.lr_restart.to_string()),
            ("lambda", e.finetune.lambda.to_string()),
            ("lr", e.finetune.lr.to_string()),
            ("epochs", e.finetune.epochs.to_string()),
            ("warmup_steps", e.finetune.warmup_steps.to_string()),
            ("weight_decay", e.finetune.weight_decay.to_string()),
            ("batch_size", e.finetune.batch_size.to_string()),
            ("finetune_train_size", e.finetune_train_size.unwrap_or(0).to_string()),
            ("teacher_lr", e.teacher.lr.to_string()),
            ("teacher_epochs", e.teacher.epochs.to_string()),
            ("teacher_warmup_steps", e.teacher.warmup_steps.to_string()),
            ("teacher_weight_decay", e.teacher.weight_decay.to_string()),
            ("teacher_batch_size", e.teacher.batch_size.to_string()),
            ("bench_shape", format!("{}x{}", b.rows, b.cols)),
            ("bench_sparsities", join(&b.sparsities)),
            ("bench_width", b.width.to_string()),
            ("bench_reps", b.reps.to_string()),
            ("bench_warmup", b.warmup.to_string()),
            ("bench_threads", b.threads.to_string()),
            ("bench_rounds", b.rounds.to_string()),
            ("bench_seed", b.seed.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
        ]);
        out
    }

    /// The effective configuration in the same grammar; parsing it back
    /// yields an equal config.
    pub fn effective(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }
}
