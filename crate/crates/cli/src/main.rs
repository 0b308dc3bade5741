//! `sparsekit` command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};
use sparsekit::bench::{peak_bytes, run_bench, write_bench_csv, BenchConfig, BenchResult};
use sparsekit::config::ExperimentConfig;
use sparsekit::distill::LossVariant;
use sparsekit::model::{
    evaluate, load_checkpoint, run_recovery_experiment, save_checkpoint, train, train_teacher, write_accuracy_csv,
    write_plot_csv, write_quant_csv, write_steps_csv, TrainRun,
};
use sparsekit::pruning::{magnitude_prune, nm_project, run_schedule, MagnitudePruner, SparsitySchedule};
use sparsekit::report::{self, write_report};
use sparsekit::sparse::{compress, decompress, load_skbc, save_skbc, sparsity_of, NmPattern, ValueWidth};
use sparsekit::tensor::{load_skdm, save_skdm};
use sparsekit::{par, Error};

const THREADS_ENV: &str = "SPARSEKIT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "sparsekit", version, about = "Sparse weight compression, kernels and sparse fine-tuning experiments")]
struct Cli {
    /// Print a single JSON object on stdout instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Prune a dense matrix (SKDM) by magnitude or to an N:M pattern.
    Prune(PruneArgs),
    /// Convert between a dense matrix (SKDM) and bitmask storage (SKBC).
    Compress(CompressArgs),
    /// Time dense vs bitmask matvec on one layer shape.
    Bench(BenchArgs),
    /// Train a dense teacher, or fine-tune a pruned student from a teacher checkpoint.
    Train(TrainArgs),
    /// Run the accuracy-vs-sparsity recovery experiment.
    Experiment(ExperimentArgs),
    /// Render markdown and CSV tables from a run directory.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("target").required(true).args(["sparsity", "nm"]))]
struct PruneArgs {
    input: PathBuf,
    #[arg(long)]
    sparsity: Option<f64>,
    /// Structured pattern such as 2:4.
    #[arg(long)]
    nm: Option<NmPattern>,
    #[arg(long, short)]
    out: PathBuf,
    /// Mask output; defaults to the output path with extension `skpm`.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Value width used for the reported bits per weight.
    #[arg(long, default_value = "fp32")]
    width: ValueWidth,
}

#[derive(Args, Debug)]
struct CompressArgs {
    input: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value = "fp32")]
    width: ValueWidth,
    /// Read SKBC and write the dense SKDM matrix instead.
    #[arg(long)]
    decompress: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Config file supplying bench_* defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// ROWSxCOLS
    #[arg(long, value_parser = parse_shape)]
    shape: Option<(usize, usize)>,
    #[arg(long, value_delimiter = ',')]
    sparsities: Option<Vec<f64>>,
    #[arg(long)]
    width: Option<ValueWidth>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path.
    #[arg(long, short, default_value = "bench.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Teacher checkpoint directory; when set, a pruned student is fine-tuned.
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long, requires = "teacher", default_value_t = 0.0)]
    sparsity: f64,
    #[arg(long, requires = "teacher", default_value = "squarehead")]
    variant: LossVariant,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; defaults to a content-addressed directory under output_dir.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    config: PathBuf,
    /// Base directory for the run; overrides output_dir.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Reuse a run directory that already holds results.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    run_dir: PathBuf,
    /// Where to write report.md and the tables; defaults to the run directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn parse_shape(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got '{s}'"))?;
    let rows: usize = r.trim().parse().map_err(|_| format!("bad row count in '{s}'"))?;
    let cols: usize = c.trim().parse().map_err(|_| format!("bad column count in '{s}'"))?;
    if rows == 0 || cols == 0 {
        return Err("shape dimensions must be positive".into());
    }
    Ok((rows, cols))
}

/// Thread cap from the environment, if set.
fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| anyhow!("{THREADS_ENV} must be a positive integer, got '{v}'"))?;
            if n == 0 {
                bail!("{THREADS_ENV} must be positive");
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

/// First 12 hex digits of the SHA-256 of the effective config (minus its
/// output location) and any extra run arguments.
fn config_hash(cfg: &ExperimentConfig, extra: &str) -> String {
    let mut h = Sha256::new();
    for (k, v) in cfg.entries() {
        if k != "output_dir" {
            h.update(format!("{k}={v}\n"));
        }
    }
    h.update(extra);
    hex::encode(h.finalize())[..12].to_string()
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json values serialize"));
}

fn cmd_prune(a: &PruneArgs) -> Result<()> {
    let w = load_skdm(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let (pruned, mask) = match (a.sparsity, a.nm) {
        (Some(s), None) => magnitude_prune(&w, s)?,
        (None, Some(p)) => nm_project(&w, p)?,
        _ => unreachable!("clap enforces exactly one target"),
    };
    save_skdm(&pruned, &a.out)?;
    let mask_path = a.mask.clone().unwrap_or_else(|| a.out.with_extension("skpm"));
    mask.save(&mask_path)?;
    let stats = sparsity_of(&pruned, a.width);
    print_json(&serde_json::to_value(stats)?);
    Ok(())
}

fn cmd_compress(a: &CompressArgs, as_json: bool) -> Result<()> {
    if a.decompress {
        let c = load_skbc(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
        let w = decompress(&c);
        save_skdm(&w, &a.out)?;
        let v = json!({"rows": w.rows(), "cols": w.cols(), "nnz": c.nnz(), "value_width": c.value_width().name()});
        if as_json {
            print_json(&v);
        } else {
            println!("wrote {} ({}x{}, {} nonzeros)", a.out.display(), w.rows(), w.cols(), c.nnz());
        }
        return Ok(());
    }
    let w = load_skdm(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let c = compress(&w, a.width);
    save_skbc(&c, &a.out)?;
    let stats = sparsity_of(&w, a.width);
    let v = json!({
        "rows": c.rows(),
        "cols": c.cols(),
        "value_width": a.width.name(),
        "nnz": c.nnz(),
        "sparsity": stats.sparsity,
        "bits_per_weight": stats.bits_per_weight,
        "storage_bytes": c.storage_bytes(),
        "dense_bytes": w.len() * a.width.bytes(),
    });
    if as_json {
        print_json(&v);
    } else {
        println!(
            "wrote {}: {}x{} {} nnz={} sparsity={:.4} bits/weight={:.3} bytes={}",
            a.out.display(),
            c.rows(),
            c.cols(),
            a.width,
            c.nnz(),
            stats.sparsity,
            stats.bits_per_weight,
            c.storage_bytes()
        );
    }
    Ok(())
}

fn available_memory() -> Option<u128> {
    let text = fs::read_to_string("/proc/meminfo").ok()?;
    let line = text.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kb: u128 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn print_bench_table(results: &[BenchResult]) {
    println!(
        "{:>6} {:>6} {:>8} {:>6} {:>12} {:>8} {:>8}",
        "rows", "cols", "sparsity", "width", "median_us", "GB/s", "speedup"
    );
    for r in results {
        println!(
            "{:>6} {:>6} {:>8.2} {:>6} {:>12.1} {:>8.2} {:>8.2}",
            r.shape_rows,
            r.shape_cols,
            r.sparsity,
            r.value_width,
            r.median_ns / 1e3,
            r.gbps,
            r.self_speedup
        );
        if let Some(w) = &r.warning {
            println!("  warning: {w}");
        }
    }
}

fn cmd_bench(a: &BenchArgs, as_json: bool, cap: Option<usize>) -> Result<()> {
    let base = load_config(a.config.as_deref())?.bench;
    let mut cfg = BenchConfig {
        sparsities: a.sparsities.clone().unwrap_or(base.sparsities.clone()),
        width: a.width.unwrap_or(base.width),
        reps: a.reps.unwrap_or(base.reps),
        warmup: a.warmup.unwrap_or(base.warmup),
        threads: a.threads.unwrap_or(base.threads),
        rounds: a.rounds.unwrap_or(base.rounds),
        seed: a.seed.unwrap_or(base.seed),
        ..base
    };
    if let Some((r, c)) = a.shape {
        cfg.rows = r;
        cfg.cols = c;
    }
    if let Some(cap) = cap {
        cfg.threads = cfg.threads.min(cap);
    }
    let need = peak_bytes(cfg.rows, cfg.cols);
    if let Some(avail) = available_memory() {
        if need > avail {
            bail!(
                "shape {}x{} needs about {} MiB but only {} MiB is available",
                cfg.rows,
                cfg.cols,
                need >> 20,
                avail >> 20
            );
        }
    }
    let results = run_bench(&cfg)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_bench_csv(&results, fs::File::create(&a.out)?)?;
    if as_json {
        print_json(&json!({"csv": a.out, "config": cfg, "results": results}));
    } else {
        print_bench_table(&results);
        println!("wrote {}", a.out.display());
    }
    Ok(())
}

fn write_run_outputs(dir: &Path, run: &TrainRun) -> Result<()> {
    write_steps_csv(run, fs::File::create(dir.join("steps.csv"))?)?;
    Ok(())
}

fn cmd_train(a: &TrainArgs, as_json: bool) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let spec = &cfg.experiment;
    let extra = match &a.teacher {
        Some(t) => format!("student teacher={} sparsity={} variant={} seed={}", t.display(), a.sparsity, a.variant, a.seed),
        None => "teacher".to_string(),
    };
    let dir = match &a.out {
        Some(d) => d.clone(),
        None => cfg.output_dir.join(format!("train-{}", config_hash(&cfg, &extra))),
    };
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(report::CONFIG_FILE), cfg.effective())?;
    let data = spec.task.generate()?;
    let (model, run) = match &a.teacher {
        None => train_teacher(spec, &data)?,
        Some(tdir) => {
            let teacher = load_checkpoint(tdir).with_context(|| format!("loading teacher {}", tdir.display()))?;
            if teacher.config() != &spec.model {
                bail!("teacher checkpoint does not match the configured model");
            }
            let mut student = teacher.clone();
            student.set_head_prunable(spec.prune_head);
            let tcfg = sparsekit::model::TrainConfig {
                variant: a.variant,
                seed: a.seed,
                ..spec.finetune.clone()
            };
            let split = match spec.finetune_train_size {
                Some(n) if n < data.train.len() => data.train.head(n)?,
                _ => data.train.clone(),
            };
            let levels = spec.prune_mode.levels(a.sparsity);
            let run = if levels.is_empty() {
                train(&mut student, &split, &tcfg, Some(&teacher), Some(&data.val))?
            } else {
                let schedule = SparsitySchedule::new(levels, tcfg.epochs)?;
                let mut last = None;
                run_schedule(&mut student, &schedule, &MagnitudePruner, |m, _, _| {
                    let r = train(m, &split, &tcfg, Some(&teacher), Some(&data.val))?;
                    last = Some(r);
                    Ok(())
                })?;
                last.expect("schedule has at least one level")
            };
            (student, run)
        }
    };
    save_checkpoint(&model, &dir.join("model"))?;
    write_run_outputs(&dir, &run)?;
    let test = evaluate(&model, &data.test)?;
    let summary = json!({
        "dir": dir,
        "steps": run.steps.len(),
        "diverged": run.diverged,
        "diverged_at": run.diverged_at,
        "sparsity": model.prunable_sparsity(),
        "test_accuracy": test.accuracy,
        "test_entropy": test.entropy,
        "epochs": run.epochs,
    });
    fs::write(dir.join("train.json"), serde_json::to_string_pretty(&summary)?)?;
    if as_json {
        print_json(&summary);
    } else {
        println!(
            "trained {} steps{}; sparsity {:.4}; test accuracy {:.4}, entropy {:.4}",
            run.steps.len(),
            if run.diverged { " (diverged)" } else { "" },
            model.prunable_sparsity(),
            test.accuracy,
            test.entropy
        );
        println!("wrote {}", dir.display());
    }
    if run.diverged {
        bail!("training diverged at step {}", run.diverged_at.unwrap_or(0));
    }
    Ok(())
}

/// Returns whether every run succeeded.
fn cmd_experiment(a: &ExperimentArgs, as_json: bool) -> Result<bool> {
    let mut cfg = ExperimentConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    if let Some(o) = &a.out {
        cfg.output_dir = o.clone();
    }
    let spec = &cfg.experiment;
    let dir = cfg.output_dir.join(config_hash(&cfg, "experiment"));
    if dir.join(report::SUMMARY_JSON).exists() && !a.force {
        bail!("{} already holds results for this config (use --force to rerun)", dir.display());
    }
    fs::create_dir_all(dir.join("steps"))?;
    fs::write(dir.join(report::CONFIG_FILE), cfg.effective())?;
    let data = spec.task.generate()?;
    let (teacher, teacher_run) = train_teacher(spec, &data)?;
    save_checkpoint(&teacher, &dir.join("teacher"))?;
    write_steps_csv(&teacher_run, fs::File::create(dir.join("teacher_steps.csv"))?)?;
    let rep = run_recovery_experiment(spec, &teacher, &data)?;
    write_accuracy_csv(&rep.rows, fs::File::create(dir.join(report::ACCURACY_CSV))?)?;
    write_quant_csv(&rep.rows, fs::File::create(dir.join(report::QUANT_CSV))?)?;
    write_plot_csv(&rep.rows, fs::File::create(dir.join(report::PLOT_CSV))?)?;
    for r in &rep.rows {
        if let Some(h) = &r.history {
            let name = format!("s{:.4}_{}_seed{}.csv", r.sparsity, r.variant.name().replace('+', "_"), r.seed);
            write_steps_csv(h, fs::File::create(dir.join("steps").join(name))?)?;
        }
    }
    fs::write(dir.join(report::SUMMARY_JSON), serde_json::to_string_pretty(&rep)?)?;
    let failures: Vec<_> = rep.rows.iter().filter(|r| r.failed()).collect();
    if as_json {
        print_json(&json!({
            "dir": dir,
            "teacher_test_accuracy": rep.teacher_test_accuracy,
            "summary": rep.summary,
            "failed_runs": failures.len(),
        }));
    } else {
        println!("teacher test accuracy {:.4}", rep.teacher_test_accuracy);
        println!(
            "{:>8} {:>14} {:>5} {:>9} {:>9} {:>9} {:>9}",
            "sparsity", "variant", "runs", "accuracy", "entropy", "int8_dlt", "diverged"
        );
        for s in &rep.summary {
            println!(
                "{:>8.2} {:>14} {:>5} {:>9.4} {:>9.4} {:>+9.4} {:>9}",
                s.sparsity,
                s.variant.name(),
                s.runs,
                s.mean_accuracy,
                s.mean_entropy,
                s.mean_int8_delta,
                s.diverged_runs
            );
        }
        for f in &failures {
            println!(
                "failed: sparsity {} {} seed {}: {}",
                f.sparsity,
                f.variant,
                f.seed,
                f.error.as_deref().unwrap_or("")
            );
        }
        println!("wrote {}", dir.display());
    }
    Ok(failures.is_empty())
}

fn cmd_report(a: &ReportArgs, as_json: bool) -> Result<()> {
    if !a.run_dir.is_dir() {
        bail!("{} is not a directory", a.run_dir.display());
    }
    let out = a.out.clone().unwrap_or_else(|| a.run_dir.clone());
    let rep = write_report(&a.run_dir, &out)?;
    if as_json {
        let runs: Vec<_> = rep
            .runs
            .iter()
            .map(|r| json!({"name": r.name, "present": r.present, "missing": r.missing, "errors": r.errors}))
            .collect();
        print_json(&json!({
            "report": out.join(report::REPORT_MD),
            "runs": runs,
            "bench_rows": rep.bench.len(),
            "accuracy_rows": rep.accuracy.len(),
        }));
    } else {
        print!("{}", rep.markdown);
    }
    Ok(())
}

fn dispatch(cli: &Cli, cap: Option<usize>) -> Result<bool> {
    match &cli.cmd {
        Command::Prune(a) => cmd_prune(a).map(|_| true),
        Command::Compress(a) => cmd_compress(a, cli.json).map(|_| true),
        Command::Bench(a) => cmd_bench(a, cli.json, cap).map(|_| true),
        Command::Train(a) => cmd_train(a, cli.json).map(|_| true),
        Command::Experiment(a) => cmd_experiment(a, cli.json),
        Command::Report(a) => cmd_report(a, cli.json).map(|_| true),
    }
}

fn report_error(e: &anyhow::Error, as_json: bool) {
    let code = match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => "config",
        Some(Error::Io(_)) => "io",
        Some(Error::CorruptFormat(_)) => "format",
        _ => "runtime",
    };
    if as_json {
        print_json(&json!({"error": format!("{e:#}"), "kind": code}));
    }
    eprintln!("error: {e:#}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cap = match thread_cap() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let result = match cap {
        Some(n) => par::with_threads(n, || dispatch(&cli, cap)),
        None => dispatch(&cli, cap),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            report_error(&e, cli.json);
            if matches!(e.downcast_ref::<Error>(), Some(Error::Config(_))) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
