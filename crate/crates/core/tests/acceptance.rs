//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). `ACCEPTANCE_ONLY=3,9` limits
//! the run to the listed criteria. The process fails if any criterion fails
//! that is not listed in `KNOWN_FAILURES`.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use common::{abs_products, brute_force_block, central_diff, gaussian_vec, random_batch, rel_err, sparse_matrix};
use sparsekit::bench::{run_bench, BenchConfig};
use sparsekit::config::ExperimentConfig;
use sparsekit::distill::{
    combined_loss, compute_loss, logit_kd_loss, squarehead_layer_loss, task_loss, LossParts, LossVariant,
    ModelOutputs,
};
use sparsekit::kernels::sparse_matvec;
use sparsekit::model::{detect_divergence, run_recovery_experiment, train_teacher, ExperimentReport, TinyModel};
use sparsekit::pruning::{nm_project, PruneMask};
use sparsekit::quant::{dequantize, quantize_int8, sparse_int8_bits_per_weight, sparse_quant_compress};
use sparsekit::sparse::{
    bits_per_weight, compress, compression_ratio_to_sparsity, decode_skbc, decompress, round_percent,
    theoretical_speedup, write_skbc, NmPattern, ValueWidth,
};
use sparsekit::tensor::{dense_matvec, DenseMatrix, Vector};
use sparsekit::Rng;

/// Criteria that are implemented as stated but cannot hold; see the
/// detail line printed for each.
const KNOWN_FAILURES: &[u32] = &[2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn default_config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.txt")
}

// 1 ------------------------------------------------------------------------

fn bits_model() -> Outcome {
    let bpw = bits_per_weight(16, 0.5).unwrap();
    let speedup = theoretical_speedup(16, 16, 0.5).unwrap();
    let shown = format!("{speedup:.2}");
    let pass = bpw == 9.0 && shown == "1.78" && (speedup - 1.77).abs() <= 0.01;
    outcome(pass, format!("bpw(16, 0.5) = {bpw}, speedup(16, 16, 0.5) = {shown} (1.77 +- 0.01)"))
}

// 2 ------------------------------------------------------------------------

fn ratio_table() -> Outcome {
    let tables: [(&[f64], &[u32]); 2] = [
        (&[2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0], &[50, 67, 75, 80, 83, 86, 88, 90]),
        (&[1.7, 2.0, 2.5, 3.3, 5.0], &[40, 50, 60, 70, 80]),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (ratios, want) in tables {
        for (r, w) in ratios.iter().zip(want) {
            let got = round_percent(compression_ratio_to_sparsity(*r).unwrap());
            if got != *w {
                pass = false;
                parts.push(format!(
                    "{r}x -> {got}% (expected {w}%; 1 - 1/{r} = {:.4})",
                    compression_ratio_to_sparsity(*r).unwrap()
                ));
            }
        }
    }
    if pass {
        outcome(true, "all 13 ratios round to the listed percentages")
    } else {
        outcome(false, format!("mismatch: {}", parts.join("; ")))
    }
}

// 3 ------------------------------------------------------------------------

fn kernel_correctness() -> Outcome {
    let mut rng = Rng::new(3);
    let sparsities = [0.5, 0.75, 0.9];
    let widths = [ValueWidth::Fp32, ValueWidth::Fp16, ValueWidth::Int8];
    let mut worst = [0.0f64; 3];
    let mut failures = 0;
    let cases = 1000;
    for case in 0..cases {
        let rows = 1 + rng.below(512) as usize;
        let cols = 1 + rng.below(512) as usize;
        let s = sparsities[case % 3];
        let wi = (case / 3) % 3;
        let w = sparse_matrix(rows, cols, s, rng.next_u64());
        let x = Vector::new((0..cols).map(|_| rng.gaussian(0.0, 1.0) as f32).collect()).unwrap();
        let c = compress(&w, widths[wi]);
        let oracle_w = decompress(&c);
        let want = dense_matvec(&oracle_w, &x).unwrap();
        let got = sparse_matvec(&c, &x).unwrap();
        let tol = if widths[wi] == ValueWidth::Int8 { 1e-4 } else { 1e-5 };
        for r in 0..rows {
            let scale = abs_products(&oracle_w, x.as_slice(), r).max(f64::MIN_POSITIVE);
            let err = (got.as_slice()[r] as f64 - want.as_slice()[r] as f64).abs() / scale;
            worst[wi] = worst[wi].max(err);
            if err > tol {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0,
        format!(
            "{cases} cases, worst relative error fp32 {:.1e}, fp16 {:.1e}, int8 {:.1e}; {failures} rows out of tolerance",
            worst[0], worst[1], worst[2]
        ),
    )
}

// 4 ------------------------------------------------------------------------

fn kernel_performance() -> Outcome {
    let cfg = BenchConfig {
        threads: 1,
        rounds: 5,
        reps: 30,
        ..BenchConfig::default()
    };
    let results = match run_bench(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("bench failed: {e}")),
    };
    let sparse: Vec<_> = results.iter().filter(|r| !r.is_dense()).collect();
    let speedups: Vec<f64> = sparse.iter().map(|r| r.self_speedup).collect();
    let at_90 = sparse
        .iter()
        .find(|r| (r.sparsity - 0.9).abs() < 1e-9)
        .map(|r| r.self_speedup)
        .unwrap_or(f64::NAN);
    let monotone = speedups.windows(2).all(|w| w[1] >= w[0]);
    let table = sparse
        .iter()
        .map(|r| format!("{:.1}:{:.2}x", r.sparsity, r.self_speedup))
        .collect::<Vec<_>>()
        .join(" ");
    outcome(
        at_90 >= 1.5 && monotone,
        format!(
            "{}x{} fp32, 1 thread, median of {} rounds x {} reps: {table} (monotone: {monotone})",
            cfg.rows, cfg.cols, cfg.rounds, cfg.reps
        ),
    )
}

// 5 ------------------------------------------------------------------------

fn max_grad_error(x: &mut Vec<f64>, analytic: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    (0..x.len())
        .map(|i| rel_err(analytic[i], central_diff(x, i, 1e-6, f), 1e-6))
        .fold(0.0, f64::max)
}

fn gradient_checks() -> Outcome {
    let mut rng = Rng::new(5);
    let (b, s, v, d, layers) = (2, 3, 5, 4, 2);
    let mut loss_err = 0.0f64;
    let mut points = 0;
    for _ in 0..20 {
        let batch = random_batch(&mut rng, b, s, v, 1);
        let t_logits = gaussian_vec(&mut rng, b * s * v, 1.5);
        let t_feats: Vec<Vec<f64>> = (0..layers).map(|_| gaussian_vec(&mut rng, b * s * d, 1.0)).collect();

        let mut x = gaussian_vec(&mut rng, b * s * v, 1.5);
        let g = task_loss(&x, v, &batch).unwrap().grad;
        loss_err = loss_err.max(max_grad_error(&mut x, &g, &mut |l| task_loss(l, v, &batch).unwrap().loss));
        let g = logit_kd_loss(&t_logits, &x, v, &batch).unwrap().grad;
        loss_err = loss_err.max(max_grad_error(&mut x, &g, &mut |l| {
            logit_kd_loss(&t_logits, l, v, &batch).unwrap().loss
        }));
        let mut f = gaussian_vec(&mut rng, b * s * d, 1.0);
        let g = squarehead_layer_loss(&t_feats[0], &f, d, &batch).unwrap().grad;
        loss_err = loss_err.max(max_grad_error(&mut f, &g, &mut |f| {
            squarehead_layer_loss(&t_feats[0], f, d, &batch).unwrap().loss
        }));

        for variant in LossVariant::STANDARD_VARIANTS {
            let n_logits = b * s * v;
            let mut x = gaussian_vec(&mut rng, n_logits + layers * b * s * d, 1.0);
            let eval = |x: &[f64]| {
                let lg = &x[..n_logits];
                let parts = LossParts {
                    task: task_loss(lg, v, &batch).unwrap(),
                    logit_kd: Some(logit_kd_loss(&t_logits, lg, v, &batch).unwrap()),
                    features: Some(
                        (0..layers)
                            .map(|l| {
                                let fs = &x[n_logits + l * b * s * d..n_logits + (l + 1) * b * s * d];
                                squarehead_layer_loss(&t_feats[l], fs, d, &batch).unwrap()
                            })
                            .collect(),
                    ),
                };
                combined_loss(variant, &parts, 1.0).unwrap()
            };
            let out = eval(&x);
            let mut analytic = out.grad_logits.clone();
            for l in 0..layers {
                match out.grad_features.get(l) {
                    Some(g) => analytic.extend_from_slice(g),
                    None => analytic.extend(std::iter::repeat(0.0).take(b * s * d)),
                }
            }
            loss_err = loss_err.max(max_grad_error(&mut x, &analytic, &mut |x| eval(x).total));
        }
        points += 1;
    }

    let cfg = common::small_config();
    let mut model_err = 0.0f64;
    for variant in LossVariant::STANDARD_VARIANTS {
        let student: TinyModel<f64> = TinyModel::init(cfg, &mut rng).unwrap();
        let teacher: TinyModel<f64> = TinyModel::init(cfg, &mut rng).unwrap();
        let inputs: Vec<u32> = (0..2 * cfg.seq).map(|_| rng.below(cfg.vocab as u64) as u32).collect();
        let batch = random_batch(&mut rng, 2, cfg.seq, cfg.vocab, 1);
        let tpass = teacher.forward(&inputs, cfg.seq).unwrap();
        let loss_of = |m: &TinyModel<f64>| {
            let pass = m.forward(&inputs, cfg.seq).unwrap();
            let out = compute_loss(
                variant,
                1.0,
                &ModelOutputs {
                    logits: &pass.logits,
                    features: pass.features(),
                },
                Some(&ModelOutputs {
                    logits: &tpass.logits,
                    features: tpass.features(),
                }),
                cfg.vocab,
                cfg.d_model,
                &batch,
            )
            .unwrap();
            (pass, out)
        };
        let (pass, out) = loss_of(&student);
        let grads = student.backward(&pass, &out.grad_logits, &out.grad_features).unwrap();
        let mut probe = student.clone();
        for p in 0..student.params().len() {
            for i in 0..student.params()[p].len() {
                let orig = student.params()[p].data()[i];
                probe.params_mut()[p].data_mut()[i] = orig + 1e-6;
                let up = loss_of(&probe).1.total;
                probe.params_mut()[p].data_mut()[i] = orig - 1e-6;
                let down = loss_of(&probe).1.total;
                probe.params_mut()[p].data_mut()[i] = orig;
                let numeric = (up - down) / 2e-6;
                model_err = model_err.max(rel_err(grads.params[p].data()[i], numeric, 1e-6));
            }
        }
    }
    outcome(
        loss_err < 1e-4 && model_err < 1e-3,
        format!(
            "losses: {points} points each, max rel err {loss_err:.1e} (< 1e-4); model: all parameters, 3 variants, max rel err {model_err:.1e} (< 1e-3)"
        ),
    )
}

// 6 ------------------------------------------------------------------------

fn loss_identities() -> Outcome {
    let mut rng = Rng::new(6);
    let mut fails = Vec::new();
    let batch = random_batch(&mut rng, 3, 4, 6, 3);
    let logits = gaussian_vec(&mut rng, 72, 2.0);
    if logit_kd_loss(&logits, &logits, 6, &batch).unwrap().loss != 0.0 {
        fails.push("KL(identical) != 0");
    }
    for _ in 0..500 {
        let t = gaussian_vec(&mut rng, 72, 3.0);
        let s = gaussian_vec(&mut rng, 72, 3.0);
        if logit_kd_loss(&t, &s, 6, &batch).unwrap().loss < 0.0 {
            fails.push("KL < 0");
            break;
        }
    }
    let ft = gaussian_vec(&mut rng, 3 * 4 * 8, 1.0);
    let fs = gaussian_vec(&mut rng, 3 * 4 * 8, 1.0);
    let sh = |t: &[f64], s: &[f64]| squarehead_layer_loss(t, s, 8, &batch).unwrap().loss;
    if sh(&ft, &ft).abs() > 1e-7 {
        fails.push("SquareHead(f, f) != 0");
    }
    if (sh(&ft, &vec![0.0; ft.len()]) - 1.0).abs() > 1e-7 {
        fails.push("SquareHead(f, 0) != 1");
    }
    let base = sh(&ft, &fs);
    for c in [1e-3, 0.37, 12.0, 1e3] {
        let scale = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
        if (sh(&scale(&ft), &scale(&fs)) - base).abs() > 1e-7 {
            fails.push("SquareHead not scale invariant");
        }
    }
    let mut fs2 = fs.clone();
    let mut logits2 = logits.clone();
    for i in 0..batch.tokens() {
        if batch.is_pad(i) {
            fs2[i * 8..(i + 1) * 8].iter_mut().for_each(|x| *x = rng.gaussian(0.0, 100.0));
            logits2[i * 6..(i + 1) * 6].iter_mut().for_each(|x| *x = rng.gaussian(0.0, 100.0));
        }
    }
    if sh(&ft, &fs2) != base
        || task_loss(&logits2, 6, &batch).unwrap().loss != task_loss(&logits, 6, &batch).unwrap().loss
        || logit_kd_loss(&logits, &logits2, 6, &batch).unwrap().loss != 0.0
    {
        fails.push("padding perturbation changed a loss");
    }
    if fails.is_empty() {
        outcome(true, "KL(p, p) = 0, KL >= 0 on 500 pairs, SquareHead anchors, scale and padding invariance")
    } else {
        outcome(false, fails.join("; "))
    }
}

// 7, 8, 10 (toy part) ------------------------------------------------------

struct Recovery {
    report: ExperimentReport,
    seconds: f64,
}

fn run_recovery() -> Result<Recovery, String> {
    let cfg = ExperimentConfig::load(&default_config_path()).map_err(|e| e.to_string())?;
    let spec = cfg.experiment;
    let start = Instant::now();
    let data = spec.task.generate().map_err(|e| e.to_string())?;
    let (teacher, _) = train_teacher(&spec, &data).map_err(|e| e.to_string())?;
    let report = run_recovery_experiment(&spec, &teacher, &data).map_err(|e| e.to_string())?;
    Ok(Recovery {
        report,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn mean_of(r: &ExperimentReport, s: f64, v: LossVariant, f: impl Fn(&sparsekit::model::SummaryRow) -> f64) -> f64 {
    r.summary_for(s, v).map(f).unwrap_or(f64::NAN)
}

fn recovery(rec: &Result<Recovery, String>) -> Outcome {
    let rec = match rec {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("experiment failed: {e}")),
    };
    let r = &rec.report;
    let acc = |s, v| mean_of(r, s, v, |x| x.mean_accuracy);
    let teacher_ok = r.teacher_val_accuracy >= 0.95;
    let a = [0.75, 0.9]
        .iter()
        .all(|&s| acc(s, LossVariant::SquareHead) >= acc(s, LossVariant::CrossEntropy));
    let sh_diverged: usize = r
        .summary
        .iter()
        .filter(|x| x.variant == LossVariant::SquareHead)
        .map(|x| x.diverged_runs + x.failed_runs)
        .sum();
    let c = acc(0.75, LossVariant::SquareHead) >= 0.9 * r.teacher_test_accuracy;
    let table = [0.75, 0.9]
        .iter()
        .map(|&s| {
            format!(
                "{s}: ce {:.4} kd {:.4} sq {:.4}",
                acc(s, LossVariant::CrossEntropy),
                acc(s, LossVariant::StandardKd),
                acc(s, LossVariant::SquareHead)
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        teacher_ok && a && sh_diverged == 0 && c,
        format!(
            "teacher val {:.4}; {table}; (a) {a} (b) squarehead diverged/failed {sh_diverged} (c) {c}; {:.0} s",
            r.teacher_val_accuracy, rec.seconds
        ),
    )
}

fn entropy_trend(rec: &Result<Recovery, String>) -> Outcome {
    let rec = match rec {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("experiment failed: {e}")),
    };
    let ent = |v| mean_of(&rec.report, 0.9, v, |x| x.mean_entropy);
    let (ce, kd, sq) = (
        ent(LossVariant::CrossEntropy),
        ent(LossVariant::StandardKd),
        ent(LossVariant::SquareHead),
    );
    outcome(
        ce <= sq,
        format!("test entropy at 0.9, 3-seed mean: ce {ce:.4} kd {kd:.4} squarehead {sq:.4} (nats)"),
    )
}

// 9 ------------------------------------------------------------------------

fn divergence() -> Outcome {
    let decreasing: Vec<f64> = (0..200).map(|i| 3.0 * (-0.01 * i as f64).exp() + 0.1).collect();
    let mut spiked = decreasing.clone();
    let window = &decreasing[30..50];
    let mut sorted = window.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = (sorted[9] + sorted[10]) / 2.0;
    spiked[50] = 20.0 * median;
    let mut nan = decreasing.clone();
    nan[37] = f64::NAN;
    let got = (
        detect_divergence(&spiked),
        detect_divergence(&nan),
        detect_divergence(&decreasing),
    );
    outcome(
        got == (Some(50), Some(37), None),
        format!("spike -> {:?}, NaN -> {:?}, monotone -> {:?}", got.0, got.1, got.2),
    )
}

// 10 -----------------------------------------------------------------------

fn quantization(rec: &Result<Recovery, String>) -> Outcome {
    let mut rng = Rng::new(10);
    let mut bound_ok = true;
    for _ in 0..100 {
        let rows = 1 + rng.below(64) as usize;
        let cols = 1 + rng.below(128) as usize;
        let mut w = sparse_matrix(rows, cols, 0.0, rng.next_u64());
        let gain = rng.uniform(1e-3, 1e3) as f32;
        w.data_mut().iter_mut().for_each(|v| *v *= gain);
        let q = quantize_int8(&w);
        let d = dequantize(&q);
        for r in 0..rows {
            let s = q.scales()[r];
            bound_ok &= w.row(r).iter().zip(d.row(r)).all(|(a, b)| (a - b).abs() <= s / 2.0);
        }
    }
    let mut pattern_ok = true;
    for s in [0.0, 0.5, 0.8, 0.9] {
        let w = sparse_matrix(48, 96, s, 11);
        let c = sparse_quant_compress(&w);
        pattern_ok &= c.mask_words() == PruneMask::from_nonzeros(&w).words();
        let back = decompress(&c);
        pattern_ok &= back.data().iter().zip(w.data()).all(|(b, a)| *a != 0.0 || *b == 0.0);
    }
    let bpw = sparse_int8_bits_per_weight(&sparse_quant_compress(&sparse_matrix(40, 64, 0.8, 12))).unwrap();
    let bpw_ok = format!("{bpw:.1}") == "2.6" && (bpw - 2.6).abs() < 1e-9;
    let deltas = match rec {
        Ok(r) => {
            let mut sp: Vec<f64> = r.report.summary.iter().map(|x| x.sparsity).collect();
            sp.dedup();
            let mut parts = vec![format!(
                "teacher {:+.4}",
                r.report.teacher_int8_accuracy - r.report.teacher_test_accuracy
            )];
            for s in sp {
                let ds: Vec<String> = r
                    .report
                    .summary
                    .iter()
                    .filter(|x| x.sparsity == s)
                    .map(|x| format!("{} {:+.4}", x.variant, x.mean_int8_delta))
                    .collect();
                parts.push(format!("{s}: {}", ds.join(" ")));
            }
            parts.join(", ")
        }
        Err(_) => "unavailable".into(),
    };
    outcome(
        bound_ok && pattern_ok && bpw_ok,
        format!(
            "half-scale bound on 100 matrices {bound_ok}, pattern preserved {pattern_ok}, bpw at 80% = {bpw:.2}; int8 accuracy delta {deltas}"
        ),
    )
}

// 11 -----------------------------------------------------------------------

fn format_roundtrip() -> Outcome {
    let mut rng = Rng::new(11);
    let mut mats: Vec<DenseMatrix> = vec![DenseMatrix::zeros(13, 70), sparse_matrix(17, 64, 0.0, 1)];
    let mut single = DenseMatrix::zeros(9, 33);
    single.set(4, 32, 1.5);
    mats.push(single);
    mats.push(sparse_matrix(1, 1, 0.0, 2));
    while mats.len() < 200 {
        let rows = 1 + rng.below(100) as usize;
        let cols = 1 + rng.below(200) as usize;
        mats.push(sparse_matrix(rows, cols, rng.next_f64(), rng.next_u64()));
    }
    let exact = mats.iter().all(|w| {
        let c = compress(w, ValueWidth::Fp32);
        let mut bytes = Vec::new();
        write_skbc(&c, &mut bytes).unwrap();
        let back = decompress(&decode_skbc(&bytes).unwrap());
        back.data().iter().zip(w.data()).all(|(a, b)| a.to_bits() == b.to_bits())
    });
    let mut rejected = 0;
    for w in &mats[..50] {
        let mut bytes = Vec::new();
        write_skbc(&compress(w, ValueWidth::Fp32), &mut bytes).unwrap();
        bytes[13] ^= 1;
        rejected += decode_skbc(&bytes).is_err() as usize;
    }
    outcome(
        exact && rejected == 50,
        format!("200 matrices bit-exact {exact}; {rejected}/50 corrupted masks rejected"),
    )
}

// 12 -----------------------------------------------------------------------

fn nm_correctness() -> Outcome {
    let w = sparse_matrix(16, 512, 0.0, 12);
    let mut got = Vec::new();
    for (n, m) in [(2, 4), (16, 32), (16, 64), (16, 128)] {
        let (out, _) = nm_project(&w, NmPattern::new(n, m).unwrap()).unwrap();
        got.push(100.0 * out.count_zeros() as f64 / out.len() as f64);
    }
    let exact = got == [50.0, 50.0, 75.0, 87.5];
    let mut rng = Rng::new(13);
    let mut blocks = 0;
    let mut mismatches = 0;
    for m in 1..=8 {
        for n in 1..=m {
            for trial in 0..20 {
                // integer-valued entries make ties frequent
                let (rows, nb) = (4, 8);
                let data = (0..rows * nb * m)
                    .map(|_| {
                        if trial % 2 == 0 {
                            rng.below(4) as f32 - 2.0
                        } else {
                            rng.gaussian(0.0, 1.0) as f32
                        }
                    })
                    .collect();
                let w = DenseMatrix::new(rows, nb * m, data).unwrap();
                let (_, mask) = nm_project(&w, NmPattern::new(n, m).unwrap()).unwrap();
                for r in 0..rows {
                    for b in 0..nb {
                        let keep = brute_force_block(&w.row(r)[b * m..(b + 1) * m], n);
                        blocks += 1;
                        if keep.iter().enumerate().any(|(j, k)| mask.keep(r, b * m + j) != *k) {
                            mismatches += 1;
                        }
                    }
                }
            }
        }
    }
    outcome(
        exact && mismatches == 0,
        format!("sparsity {got:?}%; {blocks} blocks (all n <= m <= 8) vs brute force, {mismatches} mismatches"),
    )
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |id: u32| only.as_ref().map_or(true, |o| o.contains(&id));

    let recovery_run = if [7, 8, 10].iter().any(|&i| wanted(i)) {
        Some(run_recovery())
    } else {
        None
    };
    let rec = || recovery_run.as_ref().expect("recovery run requested");

    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "bits-per-weight model", Box::new(bits_model)),
        (2, "compression ratio to sparsity", Box::new(ratio_table)),
        (3, "kernel correctness", Box::new(kernel_correctness)),
        (4, "kernel performance", Box::new(kernel_performance)),
        (5, "loss gradient checks", Box::new(gradient_checks)),
        (6, "loss identities", Box::new(loss_identities)),
        (7, "recovery experiment", Box::new(|| recovery(rec()))),
        (8, "entropy trend", Box::new(|| entropy_trend(rec()))),
        (9, "divergence detection", Box::new(divergence)),
        (10, "quantization", Box::new(|| quantization(rec()))),
        (11, "format roundtrip", Box::new(format_roundtrip)),
        (12, "N:M correctness", Box::new(nm_correctness)),
    ];

    let mut unexpected = Vec::new();
    for (id, name, run) in &criteria {
        if !wanted(*id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && KNOWN_FAILURES.contains(id) {
            " [known]"
        } else {
            ""
        };
        println!(
            "criterion {id:>2} {status}{note} {name}: {} ({:.1} s)",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass && !KNOWN_FAILURES.contains(id) {
            unexpected.push(*id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
