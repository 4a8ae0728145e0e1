//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1–7 are exact or oracle checks and take seconds. Criteria 8–12
//! are trend reproductions on the bundled 10k Fashion-MNIST subset (40
//! epochs, 3 seeds, several variants) and take the better part of an hour
//! on a single core.
//!
//! Runs without the libtest harness so the summary lines always reach stdout;
//! the process exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ftcl::config::RunConfig;
use ftcl::contrastive::{
    frozen_queue_objective, in_batch_loss, queue_scores, Mode, MemoryQueue, TrainConfig, Trainer,
};
use ftcl::encoder::{forward, momentum_update, Architecture, EncoderParams};
use ftcl::error::Error;
use ftcl::feature_transform::{
    hard_negatives, pos_extrapolate, pos_interpolate, BatchTransform, FtConfig, HardNegative, NegLambdaScope,
    NegMode, PosMode,
};
use ftcl::numerics::{dot_slice, l2_normalize, normalize_rows, FeatureVector, Matrix, SeededRng, StreamKey};
use ftcl::run::{self, OutDir, RunManifest, LOSSES_FILE, SCORES_FILE};
use ftcl::telemetry::{parse_stats_csv, Recorder, TelemetryConfig};
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = std::result::Result<String, String>;

fn rng(seed: u64) -> SeededRng {
    SeededRng::new(seed, StreamKey::new(0, 0))
}

fn random_unit(dim: usize, rng: &mut SeededRng) -> FeatureVector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = l2_normalize(&FeatureVector::new(v)) {
            return u;
        }
    }
}

fn random_unit_rows(rows: usize, dim: usize, rng: &mut SeededRng) -> Matrix {
    let data: Vec<Vec<f64>> = (0..rows).map(|_| random_unit(dim, rng).into_values()).collect();
    Matrix::from_rows(&data).unwrap()
}

fn within(limit: Duration, elapsed: Duration) -> std::result::Result<(), String> {
    if elapsed <= limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:?}"))
    }
}

// ---------------------------------------------------------------- exact suite

fn closed_form_identity() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    let mut worst_end = 0.0f64;
    for _ in 0..10_000 {
        let dim = r.random_range(2..=64);
        let q = random_unit(dim, &mut r);
        let k = random_unit(dim, &mut r);
        let s = dot_slice(q.values(), k.values());
        let lambda: f64 = r.random_range(f64::EPSILON..2.0);
        let (qh, kh) = if lambda >= 1.0 {
            pos_extrapolate(&q, &k, lambda, false)
        } else {
            pos_interpolate(&q, &k, lambda, false)
        }
        .map_err(|e| e.to_string())?;
        let expected = 2.0 * lambda * (1.0 - lambda) * (1.0 - s) + s;
        worst = worst.max((dot_slice(qh.values(), kh.values()) - expected).abs());

        let (qe, ke) = pos_extrapolate(&q, &k, 2.0, false).map_err(|e| e.to_string())?;
        worst_end = worst_end.max((dot_slice(qe.values(), ke.values()) - (5.0 * s - 4.0)).abs());
    }
    within(Duration::from_secs(1), start.elapsed())?;
    if worst < 1e-9 && worst_end < 1e-9 {
        Ok(format!("max |err| {worst:.2e}, at λ=2 {worst_end:.2e}"))
    } else {
        Err(format!("max |err| {worst:.2e}, at λ=2 {worst_end:.2e} (limit 1e-9)"))
    }
}

fn hardness_monotonicity() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);
    let mut violations = Vec::new();
    let queue_len = 8;
    for i in 0..10_000 {
        let dim = r.random_range(2..=32);
        let renorm = i % 2 == 0;
        let q = random_unit(dim, &mut r);
        let k = random_unit(dim, &mut r);
        let s = dot_slice(q.values(), k.values());
        let score = |(a, b): (FeatureVector, FeatureVector)| dot_slice(a.values(), b.values());

        let ex: f64 = r.random_range(1.0..2.0);
        let after = score(pos_extrapolate(&q, &k, ex, renorm).map_err(|e| e.to_string())?);
        if after > s + 1e-12 {
            violations.push(format!("extrapolation raised {s} to {after} (λ={ex}, renorm={renorm})"));
        }
        let inn: f64 = r.random_range(0.0..1.0);
        let after = score(pos_interpolate(&q, &k, inn, renorm).map_err(|e| e.to_string())?);
        if after < s - 1e-12 {
            violations.push(format!("interpolation lowered {s} to {after} (λ={inn}, renorm={renorm})"));
        }

        let queue = MemoryQueue::from_parts(random_unit_rows(queue_len, dim, &mut r), 0, true)
            .map_err(|e| e.to_string())?;
        let hl: f64 = r.random_range(0.0..1.0);
        let hard = hard_negatives(&q, &queue, hl, renorm).map_err(|e| e.to_string())?;
        for j in 0..queue_len {
            let before = dot_slice(q.values(), queue.entries().row(j));
            let after = dot_slice(q.values(), hard.entries().row(j));
            if after < before - 1e-12 {
                violations.push(format!("hard negative lowered {before} to {after} (λ={hl}, renorm={renorm})"));
            }
        }
    }
    within(Duration::from_secs(1), start.elapsed())?;
    match violations.first() {
        None => Ok("10000 instances, no violations".into()),
        Some(v) => Err(format!("{} violations, first: {v}", violations.len())),
    }
}

/// One random small setup for the finite-difference check.
fn fd_config(i: usize, r: &mut SeededRng) -> (Architecture, TrainConfig) {
    let input = r.random_range(3..=8);
    let hidden = if i % 3 == 0 { vec![] } else { vec![r.random_range(3..=8)] };
    let dim = r.random_range(2..=6);
    let mode = if i % 4 == 3 { Mode::InBatch } else { Mode::Queue };
    let pos = [PosMode::None, PosMode::Extrapolate, PosMode::Interpolate][i % 3];
    let neg = [NegMode::None, NegMode::Interpolate, NegMode::Extrapolate, NegMode::Extend][(i / 3) % 4];
    let hard = (mode == Mode::Queue && i % 5 == 1).then_some(HardNegative { alpha: 2.0, beta: 1.0 });
    let ft = FtConfig {
        pos,
        alpha_ex: r.random_range(0.5..3.0),
        neg,
        alpha_in: r.random_range(0.5..3.0),
        neg_lambda: if i % 2 == 0 { NegLambdaScope::PerStep } else { NegLambdaScope::PerEntry },
        hard_negative: hard,
        dim_level: i % 7 == 2,
        renormalize: i % 6 != 5,
        begin_epoch: 0,
    };
    let cfg = TrainConfig {
        mode,
        tau: r.random_range(0.1..0.5),
        queue_size: r.random_range(8..=24),
        batch_size: r.random_range(3..=6),
        epochs: 1,
        ft,
        seed: 100 + i as u64,
        ..TrainConfig::default()
    };
    (Architecture::new(input, hidden, dim), cfg)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(3);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let configs = 24;
    for i in 0..configs {
        let (arch, cfg) = fd_config(i, &mut r);
        let input = arch.input;
        let b = cfg.batch_size;
        let tau = cfg.tau;
        let ft = cfg.ft.clone();
        let t = Trainer::new(arch, cfg).map_err(|e| e.to_string())?;
        // The key view is a perturbed copy, as for real augmented pairs:
        // unrelated views in two dimensions can land nearly antipodal, where
        // the mixed pair's norm vanishes and central differences lose all
        // accuracy. Views whose embedding is exactly zero (every ReLU dead)
        // are redrawn.
        let mut attempt = 0;
        let (vq, vk, g) = loop {
            let vq = Matrix::from_vec(b, input, (0..b * input).map(|_| r.sample(StandardNormal)).collect()).unwrap();
            let noise: Vec<f64> = (0..b * input).map(|_| 0.3 * r.sample::<f64, _>(StandardNormal)).collect();
            let vk = Matrix::from_vec(b, input, vq.as_slice().iter().zip(noise).map(|(x, n)| x + n).collect()).unwrap();
            match t.gradients(0, &vq, &vk, None) {
                Ok(g) => break (vq, vk, g),
                Err(Error::ZeroVector { .. }) if attempt < 20 => attempt += 1,
                Err(e) => return Err(format!("config {i}: {e}")),
            }
        };
        let analytic = g.grads.flatten();
        let flat = t.query().flatten();

        let objective = |p: &EncoderParams| -> f64 {
            match (&g.transform, &g.z_k) {
                (Some(frozen), Some(z_k)) => frozen_queue_objective(p, &vq, z_k, frozen, tau).unwrap(),
                _ => {
                    let views = vq.vstack(&vk).unwrap();
                    let (h, _) = forward(p, &views).unwrap();
                    let (z, _) = normalize_rows(&h).unwrap();
                    let mut rng = t.transform_rng(0);
                    in_batch_loss(&z, 0, &ft, tau, &mut rng, false).unwrap().loss
                }
            }
        };
        let h = 1e-5;
        for j in 0..flat.len() {
            let eval = |delta: f64| {
                let mut p = t.query().clone();
                let mut f = flat.clone();
                f[j] += delta;
                p.set_flat(&f).unwrap();
                objective(&p)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let scale = fd.abs().max(analytic[j].abs()).max(1e-4);
            let rel = (fd - analytic[j]).abs() / scale;
            worst = worst.max(rel);
            checked += 1;
            if rel >= 1e-5 {
                return Err(format!(
                    "config {i} ({:?}, pos {:?}, neg {:?}) parameter {j}: analytic {} vs finite difference {fd}",
                    t.config().mode,
                    ft.pos,
                    ft.neg,
                    analytic[j]
                ));
            }
        }
    }
    within(Duration::from_secs(30), start.elapsed())?;
    Ok(format!("{configs} configurations, {checked} parameters, max rel err {worst:.2e}"))
}

fn momentum_update_checks() -> Outcome {
    let start = Instant::now();
    let mut r = rng(4);
    let arch = Architecture::new(12, vec![16, 8], 5);
    for _ in 0..20 {
        let q = EncoderParams::init(arch.clone(), &mut r);
        let k0 = EncoderParams::init(arch.clone(), &mut r);

        let mut k = k0.clone();
        momentum_update(&mut k, &q, 1.0).map_err(|e| e.to_string())?;
        if k.flatten() != k0.flatten() {
            return Err("m = 1 changed the key encoder".into());
        }
        let mut k = k0.clone();
        momentum_update(&mut k, &q, 0.0).map_err(|e| e.to_string())?;
        if k.flatten() != q.flatten() {
            return Err("m = 0 is not an exact copy of the query encoder".into());
        }

        let m: f64 = r.random_range(0.5..0.999);
        let steps = 50;
        let dist = |a: &EncoderParams| {
            a.flatten()
                .iter()
                .zip(q.flatten())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let d0 = dist(&k0);
        let mut k = k0.clone();
        for t in 1..=steps {
            momentum_update(&mut k, &q, m).map_err(|e| e.to_string())?;
            let expected = m.powi(t) * d0;
            let err = (dist(&k) - expected).abs();
            if err > 1e-9 {
                return Err(format!("m = {m}, T = {t}: ‖θk − θq‖ off by {err:.2e}"));
            }
        }
    }
    within(Duration::from_secs(1), start.elapsed())?;
    Ok("fixed points exact, geometric decay within 1e-9 over 50 steps".into())
}

fn telemetry_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(5);
    let (n, k, d) = (64, 4096, 32);
    let mut worst = 0.0f64;
    for trial in 0..3 {
        let batch = n + 16 * trial;
        let z_q = random_unit_rows(batch, d, &mut r);
        let z_k = random_unit_rows(batch, d, &mut r);
        let queue = MemoryQueue::from_parts(random_unit_rows(k, d, &mut r), 0, true).map_err(|e| e.to_string())?;
        let t = BatchTransform::identity(&z_q, &z_k, &queue);
        let scores = queue_scores(&t.q_hat, &t.k_hat, &t.negatives).map_err(|e| e.to_string())?;
        let mut rec = Recorder::new(TelemetryConfig::default());
        rec.observe_scores(7, 1, &scores.pos, &scores.neg, false)
            .map_err(|e| e.to_string())?;
        let got = &rec.score_records()[0];
        if got.n != n || got.k != k {
            return Err(format!("record covers {}x{}, expected {n}x{k}", got.n, got.k));
        }

        // brute force: explicit loops, per-query mean then variance, then averaged
        let mut pos_sum = 0.0;
        let mut means = Vec::with_capacity(n);
        let mut vars = Vec::with_capacity(n);
        for i in 0..n {
            let qi = z_q.row(i);
            let mut p = 0.0;
            for c in 0..d {
                p += qi[c] * z_k.get(i, c);
            }
            pos_sum += p;
            let row: Vec<f64> = (0..k)
                .map(|j| (0..d).map(|c| qi[c] * queue.entries().get(j, c)).sum::<f64>())
                .collect();
            let mean = row.iter().sum::<f64>() / k as f64;
            let var = row.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / k as f64;
            means.push(mean);
            vars.push(var);
        }
        let expected = [
            pos_sum / n as f64,
            means.iter().sum::<f64>() / n as f64,
            vars.iter().sum::<f64>() / n as f64,
        ];
        let actual = [got.mean_pos, got.mean_neg, got.var_neg];
        for (a, e) in actual.iter().zip(expected) {
            worst = worst.max((a - e).abs());
        }
    }
    within(Duration::from_secs(5), start.elapsed())?;
    if worst <= 1e-12 {
        Ok(format!("max |err| {worst:.2e} over mean_pos, mean_neg, var_neg"))
    } else {
        Err(format!("max |err| {worst:.2e} (limit 1e-12)"))
    }
}

fn queue_semantics() -> Outcome {
    let start = Instant::now();
    let mut r = rng(6);
    for seq in 0..1000 {
        let cap = r.random_range(1..=48);
        let dim = r.random_range(1..=6);
        let init = random_unit_rows(cap, dim, &mut r);
        let mut queue = MemoryQueue::from_parts(init.clone(), 0, false).map_err(|e| e.to_string())?;
        let mut oracle: Vec<Vec<f64>> = init.iter_rows().map(<[f64]>::to_vec).collect();
        let (mut head, mut written) = (0usize, 0usize);
        for op in 0..r.random_range(1..=20) {
            let b = r.random_range(0..=cap + 2);
            let keys = random_unit_rows(b, dim, &mut r);
            let res = queue.enqueue(&keys);
            if b > cap {
                if !matches!(res, Err(Error::BatchTooLarge { .. })) {
                    return Err(format!("sequence {seq} op {op}: batch {b} > capacity {cap} accepted"));
                }
                continue;
            }
            res.map_err(|e| format!("sequence {seq} op {op}: {e}"))?;
            for row in keys.iter_rows() {
                oracle[head] = row.to_vec();
                head = (head + 1) % cap;
                written += 1;
            }
            let same = queue.entries().iter_rows().zip(&oracle).all(|(a, b)| a == b.as_slice());
            if !same || queue.cursor() != head || queue.is_filled() != (written >= cap) {
                return Err(format!("sequence {seq} op {op}: queue diverged from ring-buffer oracle"));
            }
        }
    }
    within(Duration::from_secs(1), start.elapsed())?;
    Ok("1000 sequences match the ring-buffer oracle".into())
}

// ------------------------------------------------------------ run helpers

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/fashion-mnist-10k")
}

/// Default run configuration pointed at the bundled dataset, with overrides.
fn fashion_config(seed: u64, overrides: &[(&str, &str)]) -> std::result::Result<RunConfig, String> {
    let mut cfg = RunConfig::default();
    let dir = data_dir();
    for (key, file) in [
        ("data.train_images", "train-images-idx3-ubyte.gz"),
        ("data.train_labels", "train-labels-idx1-ubyte.gz"),
        ("data.test_images", "test-images-idx3-ubyte.gz"),
        ("data.test_labels", "test-labels-idx1-ubyte.gz"),
    ] {
        let path = dir.join(file);
        cfg.set(key, path.to_str().unwrap()).map_err(|e| e.to_string())?;
    }
    cfg.set("train.seed", &seed.to_string()).map_err(|e| e.to_string())?;
    // the dual log is what the score-shift criterion reads
    cfg.set("telemetry.pre_ft", "true").map_err(|e| e.to_string())?;
    for (k, v) in overrides {
        cfg.set(k, v).map_err(|e| format!("{k}: {e}"))?;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn run_into(cfg: &RunConfig, dir: &Path) -> std::result::Result<RunManifest, String> {
    let out = OutDir::create(dir).map_err(|e| e.to_string())?;
    let outcome = run::pretrain(cfg, &out).map_err(|e| e.to_string())?;
    if let Some(f) = &outcome.manifest.failure {
        return Err(format!("run failed at epoch {} step {}: {}", f.epoch, f.step, f.message));
    }
    Ok(outcome.manifest)
}

fn determinism(scratch: &Path) -> Outcome {
    let start = Instant::now();
    let short = [
        ("train.epochs", "3"),
        ("train.batch_size", "128"),
        ("train.queue_size", "1024"),
        ("data.limit", "2048"),
        ("eval.after_pretrain", "false"),
        ("telemetry.pre_ft", "true"),
    ];
    let cfg = fashion_config(11, &short)?;
    let a = scratch.join("det-a");
    let b = scratch.join("det-b");
    run_into(&cfg, &a)?;
    run_into(&cfg, &b)?;
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).map_err(|e| e.to_string());
    if read(&a, SCORES_FILE)? != read(&b, SCORES_FILE)? {
        return Err("scores CSV differs between identical runs".into());
    }
    let mut quiet = cfg.clone();
    quiet.telemetry.scores = false;
    quiet.telemetry.grads = false;
    quiet.telemetry.pre_ft = false;
    let c = scratch.join("det-quiet");
    run_into(&quiet, &c)?;
    if read(&a, LOSSES_FILE)? != read(&c, LOSSES_FILE)? {
        return Err("loss trace changes when telemetry is off".into());
    }
    within(Duration::from_secs(120), start.elapsed())?;
    Ok(format!("scores CSV identical, loss trace unchanged without telemetry ({:.1?})", start.elapsed()))
}

// ------------------------------------------------------------ trend suite

const SEEDS: [u64; 3] = [0, 1, 2];

struct Variant {
    name: &'static str,
    overrides: &'static [(&'static str, &'static str)],
}

const BASELINE: &[(&str, &str)] = &[("ft.pos", "none"), ("ft.neg", "none")];

const VARIANTS: &[Variant] = &[
    Variant { name: "baseline", overrides: BASELINE },
    Variant { name: "ft", overrides: &[] },
    Variant { name: "pos-interpolate", overrides: &[("ft.pos", "interpolate")] },
    Variant { name: "extend", overrides: &[("ft.neg", "extend")] },
    Variant { name: "m=0.6", overrides: &[("ft.pos", "none"), ("ft.neg", "none"), ("train.m", "0.6")] },
    Variant { name: "m=0.9", overrides: &[("ft.pos", "none"), ("ft.neg", "none"), ("train.m", "0.9")] },
    Variant { name: "m=1.0", overrides: &[("ft.pos", "none"), ("ft.neg", "none"), ("train.m", "1.0")] },
];

struct TrendRun {
    accuracy: f64,
    mean_loss_seconds: f64,
    dir: PathBuf,
}

type TrendResults = BTreeMap<&'static str, Vec<std::result::Result<TrendRun, String>>>;

fn run_trend_suite(scratch: &Path) -> TrendResults {
    let mut results = TrendResults::new();
    for v in VARIANTS {
        for &seed in &SEEDS {
            let started = Instant::now();
            let dir = scratch.join(format!("{}-seed{seed}", v.name));
            let res = fashion_config(seed, v.overrides)
                .and_then(|cfg| run_into(&cfg, &dir))
                .and_then(|m| {
                    Ok(TrendRun {
                        accuracy: m.metrics.probe_accuracy.ok_or("no probe accuracy recorded")?,
                        mean_loss_seconds: m.metrics.mean_loss_seconds.ok_or("no loss timing recorded")?,
                        dir: dir.clone(),
                    })
                });
            match &res {
                Ok(r) => eprintln!(
                    "  [{:<16}] seed {seed}: probe accuracy {:.4} ({:.0?})",
                    v.name,
                    r.accuracy,
                    started.elapsed()
                ),
                Err(e) => eprintln!("  [{:<16}] seed {seed}: {e}", v.name),
            }
            results.entry(v.name).or_default().push(res);
        }
    }
    results
}

/// Mean probe accuracy of a variant in percentage points.
fn mean_points(results: &TrendResults, name: &str) -> std::result::Result<f64, String> {
    let runs = results.get(name).ok_or(format!("variant {name} missing"))?;
    let mut sum = 0.0;
    for r in runs {
        sum += r.as_ref().map_err(|e| format!("{name}: {e}"))?.accuracy;
    }
    Ok(100.0 * sum / runs.len() as f64)
}

fn ft_improves(results: &TrendResults) -> Outcome {
    let base = mean_points(results, "baseline")?;
    let ft = mean_points(results, "ft")?;
    let msg = format!("FT {ft:.2} vs baseline {base:.2} (Δ {:+.2} points, need ≥ +1.00)", ft - base);
    if ft - base >= 1.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn interpolation_hurts(results: &TrendResults) -> Outcome {
    let ex = mean_points(results, "ft")?;
    let inter = mean_points(results, "pos-interpolate")?;
    let msg = format!("interpolation {inter:.2} vs extrapolation {ex:.2} (Δ {:+.2} points, need ≤ −1.00)", inter - ex);
    if ex - inter >= 1.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn interior_momentum(results: &TrendResults) -> Outcome {
    let sweep = [("0.6", "m=0.6"), ("0.9", "m=0.9"), ("0.99", "baseline"), ("1.0", "m=1.0")];
    let mut accs = Vec::new();
    for (m, name) in sweep {
        accs.push((m, mean_points(results, name)?));
    }
    let (best_i, &(best_m, best)) = accs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
        .unwrap();
    let at_one = accs[3].1;
    let listing = accs.iter().map(|(m, a)| format!("m={m}: {a:.2}")).collect::<Vec<_>>().join(", ");
    let msg = format!("{listing}; best m={best_m}, m=1.0 trails by {:.2}", best - at_one);
    if best_i != 0 && best_i != 3 && best - at_one >= 2.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn score_shift(results: &TrendResults, begin_epoch: usize) -> Outcome {
    let runs = results.get("ft").ok_or("ft runs missing")?;
    let (mut pairs, mut violations, mut epochs) = (0usize, 0usize, 0usize);
    for r in runs {
        let r = r.as_ref().map_err(|e| e.clone())?;
        let records = parse_stats_csv(&r.dir.join(SCORES_FILE)).map_err(|e| e.to_string())?;
        let pre: BTreeMap<u64, f64> = records.iter().filter(|s| s.pre_ft).map(|s| (s.step, s.mean_pos)).collect();
        let mut per_epoch: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
        for post in records.iter().filter(|s| !s.pre_ft && s.epoch >= begin_epoch) {
            let before = *pre.get(&post.step).ok_or(format!("no pre-FT row for step {}", post.step))?;
            pairs += 1;
            if !(post.mean_pos < before) {
                violations += 1;
            }
            let e = per_epoch.entry(post.epoch).or_default();
            e.0 += post.mean_pos;
            e.1 += before;
            e.2 += 1;
        }
        for (post, before, _) in per_epoch.values() {
            epochs += 1;
            if !(post < before) {
                violations += 1;
            }
        }
    }
    let msg = format!("{pairs} paired steps and {epochs} epoch means after the begin epoch, {violations} violations");
    if pairs > 0 && violations == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn extended_queue(results: &TrendResults) -> Outcome {
    let inter = mean_points(results, "ft")?;
    let ext = mean_points(results, "extend")?;
    let secs = |name: &str| -> std::result::Result<f64, String> {
        let runs = results.get(name).ok_or(format!("{name} missing"))?;
        let mut sum = 0.0;
        for r in runs {
            sum += r.as_ref().map_err(|e| e.clone())?.mean_loss_seconds;
        }
        Ok(sum / runs.len() as f64)
    };
    let ratio = secs("extend")? / secs("ft")?;
    let msg = format!(
        "union {ext:.2} vs transformed-only {inter:.2} (|Δ| {:.2}, need ≤ 1.00); loss time ratio {ratio:.2}× (need ≥ 1.5×)",
        (ext - inter).abs()
    );
    if (ext - inter).abs() <= 1.0 && ratio >= 1.5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ------------------------------------------------------------------- main

fn main() -> ExitCode {
    // `cargo test -- --list` and filtered invocations expect no work here
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    // `exact` as a filter argument runs criteria 1–7 only
    let exact_only = args.iter().any(|a| a == "exact");
    let scratch = tempfile::tempdir().expect("scratch directory");

    let exact: [(u32, &str, &dyn Fn() -> Outcome); 7] = [
        (1, "closed-form mixed positive score", &closed_form_identity),
        (2, "hardness monotonicity", &hardness_monotonicity),
        (3, "gradient vs finite differences", &gradient_correctness),
        (4, "momentum update", &momentum_update_checks),
        (5, "telemetry oracle", &telemetry_oracle),
        (6, "queue FIFO semantics", &queue_semantics),
        (7, "determinism", &|| determinism(scratch.path())),
    ];
    let mut lines: Vec<(u32, &str, Outcome)> = Vec::new();
    for (n, name, check) in exact {
        let outcome = check();
        print_line(n, name, &outcome);
        lines.push((n, name, outcome));
    }

    if exact_only {
        println!("criteria  8–12 not run (exact-only filter)");
        let failed = lines.iter().filter(|l| l.2.is_err()).count();
        return if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE };
    }
    eprintln!("trend suite: {} variants x {} seeds, 40 epochs each", VARIANTS.len(), SEEDS.len());
    let results = run_trend_suite(scratch.path());
    let begin = RunConfig::default().train.ft.begin_epoch;
    let trend: Vec<(u32, &str, Outcome)> = vec![
        (8, "FT improves linear-probe transfer", ft_improves(&results)),
        (9, "positive interpolation hurts", interpolation_hurts(&results)),
        (10, "interior momentum optimum", interior_momentum(&results)),
        (11, "post-FT positive score below pre-FT", score_shift(&results, begin)),
        (12, "extended queue near-equivalence", extended_queue(&results)),
    ];
    for (n, name, outcome) in &trend {
        print_line(*n, name, outcome);
    }
    lines.extend(trend);

    let failed = lines.iter().filter(|l| l.2.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn print_line(n: u32, name: &str, outcome: &Outcome) {
    match outcome {
        Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
        Err(detail) => println!("criterion {n:>2} FAIL  {name}: {detail}"),
    }
}
