//! Latency harness for dense vs bitmask matvec on one layer shape.
//!
//! The dense baseline and every sparse configuration run on the same weights
//! and input. Each sparse kernel is checked against the dense oracle on the
//! exact buffers it is about to be timed on.

use std::hint::black_box;
use std::io::Write;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{bytes_moved, sparse_matvec, sparse_matvec_tiled, StorageMode};
use crate::par;
use crate::pruning::magnitude_prune;
use crate::rng::Rng;
use crate::sparse::{compress, decompress, ValueWidth};
use crate::tensor::{dense_matvec, dense_matvec_par, random_matrix, Distribution, Vector};

pub const MIN_REPS: usize = 30;
pub const DEFAULT_SHAPE: (usize, usize) = (4096, 12288);
/// Relative tolerance of the pre-timing correctness gate.
pub const GATE_RTOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub rows: usize,
    pub cols: usize,
    pub sparsities: Vec<f64>,
    pub width: ValueWidth,
    pub reps: usize,
    pub warmup: usize,
    pub threads: usize,
    /// Independent timing rounds; reported latencies are the median over
    /// rounds of each round's statistic.
    pub rounds: usize,
    pub tile_rows: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            rows: DEFAULT_SHAPE.0,
            cols: DEFAULT_SHAPE.1,
            sparsities: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            width: ValueWidth::Fp32,
            reps: MIN_REPS,
            warmup: 3,
            threads: 1,
            rounds: 3,
            tile_rows: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub shape_rows: usize,
    pub shape_cols: usize,
    pub sparsity: f64,
    /// `dense` for the baseline row, otherwise the bitmask payload width.
    pub value_width: String,
    pub threads: usize,
    pub median_ns: f64,
    pub mean_ns: f64,
    pub p95_ns: f64,
    pub bytes_moved: u64,
    pub gbps: f64,
    pub self_speedup: f64,
    #[serde(skip)]
    pub reps: usize,
    #[serde(skip)]
    pub warmup: usize,
    #[serde(skip)]
    pub warning: Option<String>,
}

impl BenchResult {
    pub fn is_dense(&self) -> bool {
        self.value_width == "dense"
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub median_ns: f64,
    pub mean_ns: f64,
    pub p95_ns: f64,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Nearest-rank percentile.
pub fn percentile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

pub fn summarize(samples_ns: &[f64]) -> LatencyStats {
    LatencyStats {
        median_ns: median(samples_ns),
        mean_ns: samples_ns.iter().sum::<f64>() / samples_ns.len() as f64,
        p95_ns: percentile(samples_ns, 95.0),
    }
}

/// Smallest nonzero step of the monotonic clock observed over a short probe.
pub fn timer_tick() -> Duration {
    let mut best = Duration::from_secs(1);
    for _ in 0..2000 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// Times `f` for `reps` iterations after `warmup` untimed calls.
pub fn time_reps<R>(warmup: usize, reps: usize, mut f: impl FnMut() -> R) -> Vec<f64> {
    for _ in 0..warmup {
        black_box(f());
    }
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            black_box(f());
            t.elapsed().as_nanos() as f64
        })
        .collect()
}

fn max_rel_err(y: &[f32], oracle: &[f32]) -> f64 {
    let scale = oracle.iter().fold(0.0f64, |m, v| m.max((*v as f64).abs())).max(f64::MIN_POSITIVE);
    y.iter()
        .zip(oracle)
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Bytes the harness would allocate for `cfg` at peak.
pub fn peak_bytes(rows: usize, cols: usize) -> u128 {
    // dense W, pruned copy, decompressed oracle, sort keys (8 B/weight), compressed payload
    (rows as u128) * (cols as u128) * (4 + 4 + 4 + 8 + 4)
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchResult>> {
    if cfg.reps < MIN_REPS {
        return Err(Error::invalid(format!("reps must be at least {MIN_REPS}, got {}", cfg.reps)));
    }
    if cfg.rows == 0 || cfg.cols == 0 || cfg.rounds == 0 || cfg.tile_rows == 0 {
        return Err(Error::invalid("shape, rounds and tile_rows must be positive"));
    }
    if let Some(s) = cfg.sparsities.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::invalid(format!("sparsity {s} outside [0, 1]")));
    }
    let threads = cfg.threads.max(1);
    par::with_threads(threads, || run_bench_inner(cfg, threads))
}

fn run_bench_inner(cfg: &BenchConfig, threads: usize) -> Result<Vec<BenchResult>> {
    let mut rng = Rng::new(cfg.seed);
    let w = random_matrix(cfg.rows, cfg.cols, &mut rng, Distribution::Gaussian(1.0))?;
    let x = Vector::new((0..cfg.cols).map(|_| rng.gaussian(0.0, 1.0) as f32).collect())?;
    let tick = timer_tick().as_nanos() as f64;

    let dense_run = |w: &crate::tensor::DenseMatrix| -> Vector {
        if threads == 1 {
            dense_matvec(w, &x).expect("dims checked")
        } else {
            dense_matvec_par(w, &x, cfg.tile_rows).expect("dims checked")
        }
    };

    let mut configs: Vec<Option<crate::sparse::BitmaskCompressed>> = vec![None];
    for &s in &cfg.sparsities {
        let (pruned, _) = magnitude_prune(&w, s)?;
        let c = compress(&pruned, cfg.width);
        drop(pruned);
        let y = if threads == 1 {
            sparse_matvec(&c, &x)?
        } else {
            sparse_matvec_tiled(&c, &x, cfg.tile_rows)?
        };
        let oracle = dense_matvec(&decompress(&c), &x)?;
        let err = max_rel_err(y.as_slice(), oracle.as_slice());
        if err > GATE_RTOL {
            return Err(Error::invalid(format!(
                "sparse kernel at sparsity {s} disagrees with the dense oracle (rel err {err:e})"
            )));
        }
        configs.push(Some(c));
    }

    // rounds x configs, interleaved so drift affects every configuration alike
    let mut per_round: Vec<Vec<LatencyStats>> = vec![Vec::new(); configs.len()];
    for _ in 0..cfg.rounds {
        for (i, c) in configs.iter().enumerate() {
            let samples = match c {
                None => time_reps(cfg.warmup, cfg.reps, || dense_run(&w)),
                Some(c) if threads == 1 => time_reps(cfg.warmup, cfg.reps, || sparse_matvec(c, &x)),
                Some(c) => time_reps(cfg.warmup, cfg.reps, || sparse_matvec_tiled(c, &x, cfg.tile_rows)),
            };
            per_round[i].push(summarize(&samples));
        }
    }

    let agg = |stats: &[LatencyStats]| LatencyStats {
        median_ns: median(&stats.iter().map(|s| s.median_ns).collect::<Vec<_>>()),
        mean_ns: median(&stats.iter().map(|s| s.mean_ns).collect::<Vec<_>>()),
        p95_ns: median(&stats.iter().map(|s| s.p95_ns).collect::<Vec<_>>()),
    };
    let dense_stats = agg(&per_round[0]);
    let mut out = Vec::with_capacity(configs.len());
    for (i, c) in configs.iter().enumerate() {
        let st = agg(&per_round[i]);
        let (sparsity, width, bytes) = match c {
            None => (
                0.0,
                "dense".to_string(),
                bytes_moved(cfg.rows, cfg.cols, ValueWidth::Fp32, 1.0, StorageMode::Dense)?,
            ),
            Some(c) => (cfg.sparsities[i - 1], cfg.width.name().to_string(), c.storage_bytes() as u64),
        };
        let warning = (st.median_ns < 100.0 * tick).then(|| {
            format!("median {:.0} ns is under 100x the timer tick ({tick:.0} ns)", st.median_ns)
        });
        out.push(BenchResult {
            shape_rows: cfg.rows,
            shape_cols: cfg.cols,
            sparsity,
            value_width: width,
            threads,
            median_ns: st.median_ns,
            mean_ns: st.mean_ns,
            p95_ns: st.p95_ns,
            bytes_moved: bytes,
            gbps: bytes as f64 / st.median_ns,
            self_speedup: dense_stats.median_ns / st.median_ns,
            reps: cfg.reps,
            warmup: cfg.warmup,
            warning,
        });
    }
    Ok(out)
}

pub const BENCH_CSV_COLUMNS: [&str; 11] = [
    "shape_rows",
    "shape_cols",
    "sparsity",
    "value_width",
    "threads",
    "median_ns",
    "mean_ns",
    "p95_ns",
    "bytes_moved",
    "gbps",
    "self_speedup",
];

pub fn write_bench_csv<W: Write>(results: &[BenchResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BENCH_CSV_COLUMNS)?;
    for r in results {
        w.write_record([
            r.shape_rows.to_string(),
            r.shape_cols.to_string(),
            format!("{:.4}", r.sparsity),
            r.value_width.clone(),
            r.threads.to_string(),
            format!("{:.0}", r.median_ns),
            format!("{:.0}", r.mean_ns),
            format!("{:.0}", r.p95_ns),
            r.bytes_moved.to_string(),
            format!("{:.3}", r.gbps),
            format!("{:.4}", r.self_speedup),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed row of a bench CSV, as consumed by report rendering.
#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
pub struct BenchCsvRow {
    pub shape_rows: usize,
    pub shape_cols: usize,
    pub sparsity: f64,
    pub value_width: String,
    pub threads: usize,
    pub median_ns: f64,
    pub mean_ns: f64,
    pub p95_ns: f64,
    pub bytes_moved: u64,
    pub gbps: f64,
    pub self_speedup: f64,
}

pub fn read_bench_csv<R: std::io::Read>(input: R) -> Result<Vec<BenchCsvRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != BENCH_CSV_COLUMNS {
        return Err(Error::corrupt(format!("unexpected bench CSV header: {headers:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let xs: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(percentile(&xs, 95.0), 95.0);
        assert_eq!(percentile(&[5.0], 95.0), 5.0);
        let s = summarize(&[1.0, 2.0, 3.0, 10.0]);
        assert_eq!(s.mean_ns, 4.0);
    }

    #[test]
    fn rejects_too_few_reps() {
        let cfg = BenchConfig {
            reps: 5,
            ..BenchConfig::default()
        };
        assert!(run_bench(&cfg).is_err());
    }

    #[test]
    fn small_bench_rows_and_csv() {
        let cfg = BenchConfig {
            rows: 64,
            cols: 256,
            sparsities: vec![0.5, 0.9],
            reps: 30,
            warmup: 1,
            ..BenchConfig::default()
        };
        let res = run_bench(&cfg).unwrap();
        assert_eq!(res.len(), 3);
        assert!(res[0].is_dense());
        assert!((res[0].self_speedup - 1.0).abs() < 1e-12);
        let mut buf = Vec::new();
        write_bench_csv(&res, &mut buf).unwrap();
        let rows = read_bench_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].sparsity, 0.9);
        assert_eq!(rows[1].value_width, "fp32");
    }
}
