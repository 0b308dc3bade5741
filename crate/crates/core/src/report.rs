//! Renders run directories into markdown and CSV tables.
//!
//! A run directory holds any of the artifacts named below. The report covers
//! the directory itself and each immediate subdirectory that holds
//! artifacts, in name order.
//!
//! Bench table columns: rows, cols, sparsity, value_width, bits_per_weight,
//! theoretical_speedup, median_ns, measured_speedup.
//!
//! Accuracy table columns: sparsity, variant, runs, mean_accuracy,
//! std_accuracy, mean_entropy, mean_int8_accuracy, mean_int8_delta,
//! diverged_runs, failed_runs.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::bench::{read_bench_csv, BenchCsvRow};
use crate::error::Result;
use crate::sparse::{bits_per_weight, theoretical_speedup, ValueWidth};

pub const CONFIG_FILE: &str = "config.txt";
pub const BENCH_CSV: &str = "bench.csv";
pub const ACCURACY_CSV: &str = "accuracy.csv";
pub const QUANT_CSV: &str = "quant.csv";
pub const PLOT_CSV: &str = "plot.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const REPORT_MD: &str = "report.md";
pub const BENCH_TABLE_CSV: &str = "report_bench.csv";
pub const ACCURACY_TABLE_CSV: &str = "report_accuracy.csv";

const EXPERIMENT_ARTIFACTS: [&str; 4] = [ACCURACY_CSV, QUANT_CSV, PLOT_CSV, SUMMARY_JSON];
const ALL_ARTIFACTS: [&str; 6] = [CONFIG_FILE, BENCH_CSV, ACCURACY_CSV, QUANT_CSV, PLOT_CSV, SUMMARY_JSON];

pub const BENCH_TABLE_COLUMNS: [&str; 8] = [
    "rows",
    "cols",
    "sparsity",
    "value_width",
    "bits_per_weight",
    "theoretical_speedup",
    "median_ns",
    "measured_speedup",
];

pub const ACCURACY_TABLE_COLUMNS: [&str; 10] = [
    "sparsity",
    "variant",
    "runs",
    "mean_accuracy",
    "std_accuracy",
    "mean_entropy",
    "mean_int8_accuracy",
    "mean_int8_delta",
    "diverged_runs",
    "failed_runs",
];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchTableRow {
    pub run: String,
    pub rows: usize,
    pub cols: usize,
    pub sparsity: f64,
    pub value_width: String,
    pub bits_per_weight: f64,
    pub theoretical_speedup: f64,
    pub median_ns: f64,
    pub measured_speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct AccuracyTableRow {
    #[serde(skip)]
    pub run: String,
    pub sparsity: f64,
    pub variant: String,
    pub runs: usize,
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
    pub mean_entropy: Option<f64>,
    pub mean_int8_accuracy: Option<f64>,
    pub mean_int8_delta: Option<f64>,
    pub diverged_runs: usize,
    pub failed_runs: usize,
}

#[derive(Debug, Deserialize)]
struct SummaryFile {
    teacher_test_accuracy: Option<f64>,
    summary: Vec<AccuracyTableRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub name: String,
    pub present: Vec<&'static str>,
    pub missing: Vec<&'static str>,
    pub errors: Vec<String>,
    pub teacher_test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub runs: Vec<RunSection>,
    pub bench: Vec<BenchTableRow>,
    pub accuracy: Vec<AccuracyTableRow>,
    pub markdown: String,
}

impl Report {
    pub fn has_missing(&self) -> bool {
        self.runs.iter().any(|r| !r.missing.is_empty() || !r.errors.is_empty())
    }
}

/// Bits per weight and theoretical speedup for one bench row, against an
/// FP32 dense baseline.
pub fn bench_row_model(row: &BenchCsvRow) -> Result<(f64, f64)> {
    if row.value_width == "dense" {
        return Ok((32.0, 1.0));
    }
    let width: ValueWidth = row.value_width.parse()?;
    let density = 1.0 - row.sparsity;
    Ok((
        bits_per_weight(width.bits(), density)?,
        theoretical_speedup(32, width.bits(), density)?,
    ))
}

fn has_artifacts(dir: &Path) -> bool {
    ALL_ARTIFACTS.iter().any(|a| dir.join(a).is_file())
}

fn run_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    if has_artifacts(root) {
        out.push((".".to_string(), root.to_path_buf()));
    }
    let mut subs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && has_artifacts(p))
        .collect();
    subs.sort();
    for p in subs {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        out.push((name, p));
    }
    Ok(out)
}

fn opt(x: Option<f64>, prec: usize) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.prec$}"),
        _ => "-".to_string(),
    }
}

/// Scans `root` and renders the report. Missing or unreadable artifacts are
/// listed in the output rather than failing the report.
pub fn build_report(root: &Path) -> Result<Report> {
    let mut runs = Vec::new();
    let mut bench = Vec::new();
    let mut accuracy = Vec::new();
    for (name, dir) in run_dirs(root)? {
        let present: Vec<&'static str> = ALL_ARTIFACTS.iter().copied().filter(|a| dir.join(a).is_file()).collect();
        let mut expected = vec![CONFIG_FILE];
        if EXPERIMENT_ARTIFACTS.iter().any(|a| present.contains(a)) {
            expected.extend(EXPERIMENT_ARTIFACTS);
        }
        let missing: Vec<&'static str> = expected.into_iter().filter(|a| !present.contains(a)).collect();
        let mut errors = Vec::new();
        let mut teacher_test_accuracy = None;
        if present.contains(&BENCH_CSV) {
            match fs::File::open(dir.join(BENCH_CSV)).map_err(Into::into).and_then(read_bench_csv) {
                Ok(rows) => {
                    for r in rows {
                        match bench_row_model(&r) {
                            Ok((bpw, theo)) => bench.push(BenchTableRow {
                                run: name.clone(),
                                rows: r.shape_rows,
                                cols: r.shape_cols,
                                sparsity: r.sparsity,
                                value_width: r.value_width.clone(),
                                bits_per_weight: bpw,
                                theoretical_speedup: theo,
                                median_ns: r.median_ns,
                                measured_speedup: r.self_speedup,
                            }),
                            Err(e) => errors.push(format!("{BENCH_CSV}: {e}")),
                        }
                    }
                }
                Err(e) => errors.push(format!("{BENCH_CSV}: {e}")),
            }
        }
        if present.contains(&SUMMARY_JSON) {
            let parsed = fs::read_to_string(dir.join(SUMMARY_JSON))
                .map_err(crate::Error::from)
                .and_then(|t| serde_json::from_str::<SummaryFile>(&t).map_err(Into::into));
            match parsed {
                Ok(s) => {
                    teacher_test_accuracy = s.teacher_test_accuracy;
                    accuracy.extend(s.summary.into_iter().map(|mut row| {
                        row.run = name.clone();
                        row
                    }));
                }
                Err(e) => errors.push(format!("{SUMMARY_JSON}: {e}")),
            }
        }
        runs.push(RunSection {
            name,
            present,
            missing,
            errors,
            teacher_test_accuracy,
        });
    }
    let markdown = render_markdown(root, &runs, &bench, &accuracy);
    Ok(Report {
        runs,
        bench,
        accuracy,
        markdown,
    })
}

fn render_markdown(root: &Path, runs: &[RunSection], bench: &[BenchTableRow], accuracy: &[AccuracyTableRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Report: {}\n", root.display());
    if runs.is_empty() {
        let _ = writeln!(s, "## No runs\n\nNo run artifacts were found in this directory.");
        return s;
    }
    let _ = writeln!(s, "## Runs\n");
    for r in runs {
        let _ = writeln!(s, "- `{}`: {}", r.name, r.present.join(", "));
        if let Some(t) = r.teacher_test_accuracy {
            let _ = writeln!(s, "  - teacher test accuracy: {t:.4}");
        }
        if !r.missing.is_empty() {
            let _ = writeln!(s, "  - missing: {}", r.missing.join(", "));
        }
        for e in &r.errors {
            let _ = writeln!(s, "  - unreadable: {e}");
        }
    }
    if !bench.is_empty() {
        let _ = writeln!(s, "\n## Kernel latency\n");
        let _ = writeln!(s, "| run | {} |", BENCH_TABLE_COLUMNS.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(BENCH_TABLE_COLUMNS.len() + 1));
        for b in bench {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.2} | {} | {:.2} | {:.2} | {:.0} | {:.2} |",
                b.run,
                b.rows,
                b.cols,
                b.sparsity,
                b.value_width,
                b.bits_per_weight,
                b.theoretical_speedup,
                b.median_ns,
                b.measured_speedup
            );
        }
    }
    if !accuracy.is_empty() {
        let _ = writeln!(s, "\n## Accuracy vs sparsity\n");
        let _ = writeln!(s, "| run | {} |", ACCURACY_TABLE_COLUMNS.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(ACCURACY_TABLE_COLUMNS.len() + 1));
        for a in accuracy {
            let _ = writeln!(
                s,
                "| {} | {:.2} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                a.run,
                a.sparsity,
                a.variant,
                a.runs,
                opt(a.mean_accuracy, 4),
                opt(a.std_accuracy, 4),
                opt(a.mean_entropy, 4),
                opt(a.mean_int8_accuracy, 4),
                opt(a.mean_int8_delta, 4),
                a.diverged_runs,
                a.failed_runs
            );
        }
    }
    s
}

pub fn write_bench_table<W: Write>(rows: &[BenchTableRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["run"];
    header.extend(BENCH_TABLE_COLUMNS);
    w.write_record(&header)?;
    for b in rows {
        w.write_record([
            b.run.clone(),
            b.rows.to_string(),
            b.cols.to_string(),
            format!("{:.4}", b.sparsity),
            b.value_width.clone(),
            format!("{:.4}", b.bits_per_weight),
            format!("{:.4}", b.theoretical_speedup),
            format!("{:.1}", b.median_ns),
            format!("{:.4}", b.measured_speedup),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_accuracy_table<W: Write>(rows: &[AccuracyTableRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["run"];
    header.extend(ACCURACY_TABLE_COLUMNS);
    w.write_record(&header)?;
    let f = |x: Option<f64>| match x {
        Some(v) if v.is_finite() => format!("{v:.6}"),
        _ => String::new(),
    };
    for a in rows {
        w.write_record([
            a.run.clone(),
            format!("{:.4}", a.sparsity),
            a.variant.clone(),
            a.runs.to_string(),
            f(a.mean_accuracy),
            f(a.std_accuracy),
            f(a.mean_entropy),
            f(a.mean_int8_accuracy),
            f(a.mean_int8_delta),
            a.diverged_runs.to_string(),
            a.failed_runs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Builds the report and writes the markdown and both tables into `out_dir`.
pub fn write_report(root: &Path, out_dir: &Path) -> Result<Report> {
    let report = build_report(root)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(REPORT_MD), &report.markdown)?;
    write_bench_table(&report.bench, fs::File::create(out_dir.join(BENCH_TABLE_CSV))?)?;
    write_accuracy_table(&report.accuracy, fs::File::create(out_dir.join(ACCURACY_TABLE_CSV))?)?;
    Ok(report)
}
