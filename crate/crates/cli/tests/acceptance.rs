//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. `NEUROMATCH_CRITERIA=1,4,9` runs a subset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use neuromatch::data::{load_manifest, parse_manifest, DType, TensorBlob};
use neuromatch::model::{
    fuse, pool_windows, similarity, Candidate, Checkpoint, ContextKind, Mat, Mode, Model, ModelConfig, PairInput,
    SimVariant,
};
use neuromatch::preproc::{Layout, Montage, Region};
use neuromatch::rng::rng_for;
use neuromatch::sigproc::{design_butterworth, filtfilt_slice, hilbert_envelope, zscore_slice, FilterKind};
use neuromatch::stats::{wilcoxon_rank_sum, wilcoxon_signed_rank};
use rand::seq::SliceRandom;
use rand::Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- helpers

fn neuromatch(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_neuromatch"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`neuromatch {}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Rows of a tab-separated file keyed by the first column.
fn read_tsv(path: &Path) -> Result<BTreeMap<String, BTreeMap<String, String>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty table")?.split('\t').collect();
    Ok(lines
        .map(|l| {
            let cells: Vec<&str> = l.split('\t').collect();
            let row = header.iter().zip(&cells).map(|(h, c)| (h.to_string(), c.to_string())).collect();
            (cells[0].to_string(), row)
        })
        .collect())
}

fn cell(table: &BTreeMap<String, BTreeMap<String, String>>, row: &str, col: &str) -> Result<f64, String> {
    table
        .get(row)
        .and_then(|r| r.get(col))
        .ok_or_else(|| format!("missing {row}/{col}"))?
        .parse()
        .map_err(|e| format!("{row}/{col}: {e}"))
}

/// Synthesizes and preprocesses a corpus; returns the preprocessed manifest.
fn corpus(dir: &Path, synth_args: &[&str]) -> Result<PathBuf, String> {
    let raw = dir.join("raw");
    let pre = dir.join("pre");
    let mut args = vec!["synth", "--out", p(&raw)];
    args.extend_from_slice(synth_args);
    let manifest = neuromatch(&args)?;
    neuromatch(&["preprocess", "--manifest", &manifest, "--out", p(&pre)])?;
    Ok(pre.join("manifest.jsonl"))
}

fn db(x: f64) -> f64 {
    20.0 * x.log10()
}

/// |H(e^{jω})| straight from the transfer-function polynomials.
fn magnitude(b: &[f64], a: &[f64], freq: f64, rate: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * freq / rate;
    let eval = |c: &[f64]| {
        let (mut re, mut im) = (0.0, 0.0);
        for (k, v) in c.iter().enumerate() {
            re += v * (w * k as f64).cos();
            im -= v * (w * k as f64).sin();
        }
        (re * re + im * im).sqrt()
    };
    eval(b) / eval(a)
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        eeg_channels: 3,
        conv1_maps: 3,
        conv2_maps: 4,
        embed_dim: 5,
        text_dim: 6,
        heads: 1,
        ffn_dim: 4,
        ..ModelConfig::default()
    }
}

struct Sample {
    eeg: Mat,
    env: [Vec<f64>; 2],
    windows: [Vec<(usize, usize)>; 2],
    text: [Mat; 2],
}

impl Sample {
    fn new(cfg: &ModelConfig, t: usize, seed: u64) -> Sample {
        let mut rng = rng_for(seed, &[]);
        let mut mat = |r: usize, c: usize| Mat::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let eeg = mat(cfg.eeg_channels, t);
        let text = [mat(3, cfg.text_dim), mat(2, cfg.text_dim)];
        let mut rng = rng_for(seed, &[1]);
        let n2 = t.div_ceil(3);
        Sample {
            eeg,
            env: [
                (0..t).map(|_| rng.gen_range(0.0..1.0)).collect(),
                (0..t).map(|_| rng.gen_range(0.0..1.0)).collect(),
            ],
            windows: [vec![(0, 2), (2, 5), (5, n2)], vec![(0, 4), (4, n2)]],
            text,
        }
    }

    fn input(&self) -> PairInput<'_> {
        PairInput {
            eeg: &self.eeg,
            pos: Candidate {
                envelope: &self.env[0],
                windows: &self.windows[0],
                embeddings: &self.text[0],
            },
            neg: Candidate {
                envelope: &self.env[1],
                windows: &self.windows[1],
                embeddings: &self.text[1],
            },
        }
    }
}

// ---------------------------------------------------------------- criteria

fn show_db(v: f64) -> String {
    if v < -300.0 {
        "below -300 dB".into()
    } else {
        format!("{v:.0} dB")
    }
}

fn dsp_suite() -> Check {
    let start = Instant::now();
    let rate = 512.0;
    let mut worst_cutoff = 0.0f64;
    for (kind, cutoff) in [(FilterKind::Lowpass, 32.0), (FilterKind::Highpass, 0.5), (FilterKind::Lowpass, 8.0)] {
        let f = design_butterworth(kind, cutoff, 4, rate).map_err(|e| e.to_string())?;
        let g = db(magnitude(f.numerator(), f.denominator(), cutoff, rate));
        worst_cutoff = worst_cutoff.max((g + 3.0103).abs());
    }
    ensure(worst_cutoff < 0.1, format!("gain at cutoff off by {worst_cutoff:.4} dB"))?;

    let hp = design_butterworth(FilterKind::Highpass, 0.5, 4, rate).map_err(|e| e.to_string())?;
    let dc_db = db(magnitude(hp.numerator(), hp.denominator(), 0.0, rate).max(1e-300));
    let step: Vec<f64> = vec![3.0; 60 * 512];
    let y = filtfilt_slice(&hp, &step).map_err(|e| e.to_string())?;
    let mid = &y[20 * 512..40 * 512];
    let residual_db = db(mid.iter().map(|v| v.abs()).fold(0.0, f64::max) / 3.0);
    ensure(dc_db < -60.0 && residual_db < -60.0, format!("DC gain {dc_db:.1} dB, residual {residual_db:.1} dB"))?;

    let lp = design_butterworth(FilterKind::Lowpass, 32.0, 4, rate).map_err(|e| e.to_string())?;
    let mut worst_lag = 0i64;
    for freq in [2.0, 5.0, 11.0] {
        let x: Vec<f64> = (0..4096).map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate).sin()).collect();
        let y = filtfilt_slice(&lp, &x).map_err(|e| e.to_string())?;
        let core = 1024..3072;
        let lag = (-20i64..=20)
            .max_by(|&a, &b| {
                let c = |l: i64| core.clone().map(|i| x[i] * y[(i as i64 + l) as usize]).sum::<f64>();
                c(a).total_cmp(&c(b))
            })
            .unwrap();
        worst_lag = worst_lag.max(lag.abs());
    }
    ensure(worst_lag == 0, format!("filtfilt lag {worst_lag} samples"))?;

    let n = 10 * 512;
    let modulator: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * 2.0 * i as f64 / rate).sin()).collect();
    let signal: Vec<f64> = modulator
        .iter()
        .enumerate()
        .map(|(i, m)| m * (2.0 * std::f64::consts::PI * 60.0 * i as f64 / rate).sin())
        .collect();
    let env = hilbert_envelope(&signal, rate).map_err(|e| e.to_string())?;
    let r = pearson(&env, &modulator);
    ensure(r > 0.98, format!("envelope correlation {r:.4}"))?;

    let mut rng = rng_for(1, &[]);
    let mut worst_z = 0.0f64;
    for _ in 0..16 {
        let mut x: Vec<f64> = (0..1000).map(|_| 5.0 + 40.0 * rng.gen::<f64>()).collect();
        zscore_slice(&mut x);
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
        worst_z = worst_z.max(m.abs()).max((sd - 1.0).abs());
    }
    ensure(worst_z < 1e-9, format!("z-score error {worst_z:e}"))?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(30), format!("took {took:?}"))?;
    Ok(format!(
        "cutoff error {worst_cutoff:.2e} dB, DC gain {}, DC residual {}, lag 0, envelope r {r:.4}, z error {worst_z:.1e}",
        show_db(dc_db),
        show_db(residual_db)
    ))
}

fn pooling_oracle() -> Check {
    let mut rng = rng_for(2, &[]);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let maps = rng.gen_range(1..6);
        let frames = rng.gen_range(1..80);
        let feats = Mat::from_vec(maps, frames, (0..maps * frames).map(|_| rng.gen_range(-10.0..10.0)).collect()).unwrap();
        let mut cuts: Vec<usize> = (1..frames).filter(|_| rng.gen_bool(0.2)).collect();
        cuts.insert(0, 0);
        cuts.push(frames);
        let windows: Vec<(usize, usize)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
        let pooled = pool_windows(&feats, &windows).map_err(|e| e.to_string())?;
        for (w, &(a, b)) in windows.iter().enumerate() {
            for m in 0..maps {
                let mut sum = 0.0;
                for t in a..b {
                    sum += feats.get(m, t);
                }
                worst = worst.max((pooled.get(w, m) - sum / (b - a) as f64).abs());
            }
        }
    }
    ensure(worst < 1e-6, format!("max error {worst:e}"))?;
    Ok(format!("100 cases, max abs error {worst:.1e}"))
}

fn gradient_check() -> Check {
    let start = Instant::now();
    let mut checked = 0;
    let mut worst = 0.0f64;
    for context in [ContextKind::Recurrent, ContextKind::Transformer] {
        let cfg = ModelConfig { context, ..tiny_model() };
        let model = Model::new(cfg.clone()).map_err(|e| e.to_string())?;
        let sample = Sample::new(&cfg, 21, 3);
        let input = sample.input();
        let mut rng = rng_for(4, &[]);
        let mut params: Vec<f64> = model.init_params(5).iter().map(|v| v + rng.gen_range(-0.2..0.2)).collect();
        let mut g = vec![0.0; params.len()];
        model
            .pair_loss(&params, &input, 0.5, SimVariant::Convex, Mode::Inference, Some(&mut g))
            .map_err(|e| e.to_string())?;
        let h = 1e-5;
        for i in 0..params.len() {
            let orig = params[i];
            let loss = |p: &[f64]| model.pair_loss(p, &input, 0.5, SimVariant::Convex, Mode::Inference, None).unwrap().loss;
            params[i] = orig + h;
            let up = loss(&params);
            params[i] = orig - h;
            let down = loss(&params);
            params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            // the floor keeps identically zero gradients (rounding noise
            // only) from dividing by zero
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let took = start.elapsed();
    ensure(worst < 1e-4, format!("worst relative error {worst:e}"))?;
    ensure(took < Duration::from_secs(300), format!("took {took:?}"))?;
    Ok(format!("{checked} parameters, worst relative error {worst:.1e}"))
}

fn fusion_algebra() -> Check {
    let mut rng = rng_for(6, &[]);
    for _ in 0..500 {
        let d = rng.gen_range(1..40);
        let scale = [0.01, 1.0, 100.0][rng.gen_range(0..3)];
        let mut v = || (0..d).map(|_| scale * rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (s, t, e) = (v(), v(), v());
        let lambda: f64 = rng.gen();
        for variant in [SimVariant::Convex, SimVariant::Blend] {
            let x = fuse(variant, &s, &t, &e, lambda).map_err(|e| e.to_string())?;
            ensure(x > 0.0 || scale == 100.0, format!("{variant:?} gave {x}"))?;
            ensure(x <= 1.0, format!("{variant:?} gave {x} > 1"))?;
        }
        let one = fuse(SimVariant::Convex, &s, &t, &e, 1.0).unwrap();
        let zero = fuse(SimVariant::Convex, &s, &t, &e, 0.0).unwrap();
        let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        ensure(one == similarity(&s, &e).unwrap() && zero == similarity(&t, &e).unwrap(), "endpoint mismatch")?;
        ensure((one - (-l1(&s, &e)).exp()).abs() <= 1e-15, "speech similarity differs from exp(-L1)")?;
        ensure(fuse(SimVariant::Convex, &s, &t, &s, 0.0).is_ok(), "fuse failed")?;
    }
    ensure(similarity(&[0.3, -2.0], &[0.3, -2.0]).unwrap() == 1.0, "identical embeddings must score 1")?;

    let cfg = tiny_model();
    let model = Model::new(cfg.clone()).map_err(|e| e.to_string())?;
    let sample = Sample::new(&cfg, 30, 7);
    let params = model.init_params(8);
    let sum = |g: &[f64], prefix: &str| -> f64 {
        model.layout().ranges_with_prefix(prefix).map(|r| g[r].iter().map(|v| v.abs()).sum::<f64>()).sum()
    };
    for (lambda, silent, active) in [(1.0, "text.", "speech."), (0.0, "speech.", "text.")] {
        let mut g = vec![0.0; params.len()];
        model
            .pair_loss(&params, &sample.input(), lambda, SimVariant::Convex, Mode::Train { seed: 9 }, Some(&mut g))
            .map_err(|e| e.to_string())?;
        ensure(sum(&g, silent) == 0.0, format!("λ={lambda}: {silent} gradient not zero"))?;
        ensure(sum(&g, active) > 0.0, format!("λ={lambda}: {active} gradient is zero"))?;
    }
    Ok("500 random cases in (0, 1]; endpoints exact; silent branch gradients exactly 0".into())
}

fn natural_protocol(work: &Path) -> Check {
    let manifest = corpus(&work.join("natural"), &["--seed", "5", "--protocol", "natural"])?;
    let m = p(&manifest);
    let models = work.join("natural/models");
    let common = ["--seed", "5", "--protocol", "natural", "--folds", "6", "--test-per-fold", "3"];
    let mut args = vec!["train", "--manifest", m, "--out", p(&models)];
    args.extend_from_slice(&common);
    neuromatch(&args)?;
    let reports = work.join("natural/reports");
    neuromatch(&["evaluate", "--manifest", m, "--models", p(&models), "--out", p(&reports)])?;
    let table = read_tsv(&reports.join("accuracy_by_lambda.tsv"))?;
    let acc: Vec<f64> = ["0", "0.5", "1"].iter().map(|l| cell(&table, l, "fold_mean")).collect::<Result<_, _>>()?;

    let control = work.join("natural/control");
    let mut args = vec!["train", "--manifest", m, "--out", p(&control), "--shuffle-labels"];
    args.extend_from_slice(&common);
    neuromatch(&args)?;
    let summary = read_tsv(&control.join("fold_summary.tsv"))?;
    let shuffled =
        summary.keys().map(|f| cell(&summary, f, "accuracy_lambda_0.5")).sum::<Result<f64, _>>()? / summary.len() as f64;

    let detail = format!(
        "λ=0 {:.2}%, λ=0.5 {:.2}%, λ=1 {:.2}%, shuffled control {shuffled:.2}%",
        acc[0], acc[1], acc[2]
    );
    ensure(acc[1] >= 85.0, format!("λ=0.5 below 85%: {detail}"))?;
    ensure(acc[0] >= 70.0 && acc[2] >= 70.0, format!("single modality below 70%: {detail}"))?;
    ensure((shuffled - 50.0).abs() <= 5.0, format!("control outside 50 ± 5: {detail}"))?;
    Ok(detail)
}

const DICHOTIC_SYNTH: [&str; 14] = [
    "--seed",
    "11",
    "--protocol",
    "dichotic",
    "--subjects",
    "10",
    "--trials",
    "30",
    "--set",
    "semantic_gain=1",
    "--set",
    "acoustic_gain=0.25",
    "--set",
    "inattentive_fraction=0.2",
];

fn dichotic_models(work: &Path) -> Result<(PathBuf, PathBuf), String> {
    let dir = work.join("dichotic");
    let models = dir.join("models");
    let manifest = dir.join("pre/manifest.jsonl");
    if !models.join("fold_summary.tsv").exists() {
        corpus(&dir, &DICHOTIC_SYNTH)?;
        neuromatch(&[
            "train", "--manifest", p(&manifest), "--out", p(&models), "--seed", "11", "--protocol", "dichotic",
            "--folds", "10", "--test-per-fold", "3",
        ])?;
    }
    Ok((manifest, models))
}

fn dichotic_protocol(work: &Path) -> Check {
    let (_, models) = dichotic_models(work)?;
    let summary = read_tsv(&models.join("fold_summary.tsv"))?;
    let col = |c: &str| summary.keys().map(|f| cell(&summary, f, c)).collect::<Result<Vec<f64>, _>>();
    let joint = col("accuracy_lambda_0.5")?;
    let speech = col("accuracy_lambda_1")?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let test = wilcoxon_signed_rank(&joint, &speech);
    let detail = format!(
        "{} folds, λ=0.5 {:.2}%, λ=1 {:.2}%, signed-rank {}",
        joint.len(),
        mean(&joint),
        mean(&speech),
        match &test {
            Ok(t) => format!("p={:.4}", t.p),
            Err(e) => e.to_string(),
        }
    );
    ensure(joint.len() == 10, format!("expected 10 folds: {detail}"))?;
    ensure(mean(&joint) > mean(&speech), format!("λ=0.5 does not exceed λ=1: {detail}"))?;
    ensure(test.is_ok_and(|t| t.p < 0.01), format!("difference not significant: {detail}"))?;
    Ok(detail)
}

fn boundary_ablation(work: &Path) -> Check {
    let (manifest, models) = dichotic_models(work)?;
    let reports = work.join("dichotic/ablation");
    neuromatch(&[
        "evaluate",
        "--manifest",
        p(&manifest),
        "--models",
        p(&models),
        "--out",
        p(&reports),
        "--word-boundaries",
        "none,random:2,random:3,random:4,random:5",
    ])?;
    let table = read_tsv(&reports.join("boundary_ablation.tsv"))?;
    let truth = cell(&table, "true", "fold_mean")?;
    let mut parts = vec![format!("true {truth:.2}%")];
    let mut failures = Vec::new();
    for mode in ["none", "random:2", "random:3", "random:4", "random:5"] {
        let acc = cell(&table, mode, "fold_mean")?;
        let pv = cell(&table, mode, "p_vs_true").unwrap_or(f64::NAN);
        parts.push(format!("{mode} {acc:.2}% (p={pv:.1e})"));
        if acc > truth {
            failures.push(format!("{mode} beats true"));
        }
        if mode.starts_with("random") && !(pv < 0.01) {
            failures.push(format!("{mode} not significant"));
        }
    }
    let detail = parts.join(", ");
    ensure(failures.is_empty(), format!("{}: {detail}", failures.join("; ")))?;
    Ok(detail)
}

/// Brute-force two-sided p: twice the smaller tail over every equally
/// likely relabelling, capped at 1.
fn brute_p(stats: &[f64], observed: f64) -> f64 {
    let n = stats.len() as f64;
    let lo = stats.iter().filter(|&&s| s <= observed + 1e-9).count() as f64 / n;
    let hi = stats.iter().filter(|&&s| s >= observed - 1e-9).count() as f64 / n;
    (2.0 * lo.min(hi)).min(1.0)
}

fn midranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let below = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn statistics_oracle() -> Check {
    let mut rng = rng_for(12, &[]);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 200 {
        // integer data so ties and zero differences occur
        let n = rng.gen_range(3..=10);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64).collect();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
        if d.len() >= 3 {
            let ranks = midranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
            let observed: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
            let all: Vec<f64> = (0..1u32 << d.len())
                .map(|mask| ranks.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, r)| r).sum())
                .collect();
            let t = wilcoxon_signed_rank(&a, &b).map_err(|e| e.to_string())?;
            ensure(t.exact && t.statistic == observed, format!("signed-rank statistic {} vs {observed}", t.statistic))?;
            worst = worst.max((t.p - brute_p(&all, observed)).abs());
            cases += 1;
        }

        let na = rng.gen_range(1..=9);
        let nb = rng.gen_range(1..=(10 - na));
        let x: Vec<f64> = (0..na).map(|_| rng.gen_range(0..6) as f64).collect();
        let y: Vec<f64> = (0..nb).map(|_| rng.gen_range(0..6) as f64).collect();
        let pooled: Vec<f64> = x.iter().chain(&y).copied().collect();
        let ranks = midranks(&pooled);
        let u = |members: &[usize]| members.iter().map(|&i| ranks[i]).sum::<f64>() - (na * (na + 1)) as f64 / 2.0;
        let observed = u(&(0..na).collect::<Vec<_>>());
        let all: Vec<f64> = (0..1u32 << pooled.len())
            .filter(|m| m.count_ones() as usize == na)
            .map(|m| u(&(0..pooled.len()).filter(|i| m >> i & 1 == 1).collect::<Vec<_>>()))
            .collect();
        let t = wilcoxon_rank_sum(&x, &y).map_err(|e| e.to_string())?;
        ensure(t.exact && (t.statistic - observed).abs() < 1e-9, "rank-sum statistic differs")?;
        worst = worst.max((t.p - brute_p(&all, observed)).abs());
        cases += 1;
    }
    ensure(worst < 1e-12, format!("worst p difference {worst:e}"))?;
    Ok(format!("{cases} cases, worst p difference {worst:.1e}"))
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let path = e.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism(work: &Path) -> Check {
    let run = |dir: &Path, jobs: &str| -> Result<(), String> {
        let manifest = corpus(dir, &["--seed", "3", "--subjects", "2", "--trials", "6"])?;
        let models = dir.join("models");
        neuromatch(&[
            "train", "--manifest", p(&manifest), "--out", p(&models), "--seed", "3", "--folds", "2",
            "--test-per-fold", "2", "--epochs", "2", "--jobs", jobs,
        ])?;
        neuromatch(&[
            "evaluate", "--manifest", p(&manifest), "--models", p(&models), "--out", p(&dir.join("reports")),
            "--lambdas", "0,0.5,1", "--regions", "all", "--word-boundaries", "none,random:3", "--epochs", "2",
            "--jobs", jobs,
        ])?;
        Ok(())
    };
    let (a, b) = (work.join("det-a"), work.join("det-b"));
    run(&a, "1")?;
    run(&b, "2")?;
    let (fa, fb) = (files(&a), files(&b));
    ensure(fa == fb, "different file sets")?;
    let checkpoints = fa.iter().filter(|f| f.extension().is_some_and(|e| e == "nmck")).count();
    let reports = fa.iter().filter(|f| f.starts_with("reports")).count();
    ensure(checkpoints == 2 && reports == 6, format!("{checkpoints} checkpoints, {reports} reports"))?;
    for f in &fa {
        let same = std::fs::read(a.join(f)).map_err(|e| e.to_string())? == std::fs::read(b.join(f)).map_err(|e| e.to_string())?;
        ensure(same, format!("{} differs", f.display()))?;
    }
    Ok(format!("{} files byte-identical across two runs (jobs 1 and 2)", fa.len()))
}

fn formats(work: &Path) -> Check {
    let dir = work.join("formats");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let mut rng = rng_for(13, &[]);
    let values: Vec<f64> = (0..128 * 640).map(|_| rng.gen_range(-1e3..1e3)).collect();
    for dtype in [DType::F32, DType::F64] {
        let blob = TensorBlob::new(dtype, vec![128, 640], values.clone()).map_err(|e| e.to_string())?;
        let path = dir.join("blob.nmtb");
        blob.save(&path).map_err(|e| e.to_string())?;
        let back = TensorBlob::load(&path).map_err(|e| e.to_string())?;
        let stored: Vec<u64> = match dtype {
            DType::F32 => values.iter().map(|&v| f64::from(v as f32).to_bits()).collect(),
            DType::F64 => values.iter().map(|v| v.to_bits()).collect(),
        };
        let bits: Vec<u64> = back.data.iter().map(|v| v.to_bits()).collect();
        ensure(back.shape == blob.shape && bits == stored, format!("{dtype:?} blob round trip"))?;
    }
    let model = Model::new(tiny_model()).map_err(|e| e.to_string())?;
    let params: Vec<f64> = model.init_params(1).iter().map(|v| v * std::f64::consts::PI).collect();
    let ck = Checkpoint::new(tiny_model(), params).map_err(|e| e.to_string())?;
    let path = dir.join("model.nmck");
    ck.save(&path).map_err(|e| e.to_string())?;
    let back = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    ensure(
        back.config == ck.config && back.params.iter().zip(&ck.params).all(|(a, b)| a.to_bits() == b.to_bits()),
        "checkpoint round trip",
    )?;

    let manifest = corpus(&dir.join("corpus"), &["--seed", "4", "--subjects", "2", "--trials", "3", "--protocol", "dichotic"])?;
    let root = manifest.parent().unwrap();
    let text = std::fs::read_to_string(&manifest).map_err(|e| e.to_string())?;
    let reference = load_manifest(&manifest).map_err(|e| e.to_string())?;
    let mut lines: Vec<&str> = text.lines().collect();
    for _ in 0..5 {
        lines.shuffle(&mut rng);
        let ds = parse_manifest(lines.join("\n").as_bytes(), root).map_err(|e| e.to_string())?;
        ensure(ds == reference, "permuted manifest gives a different dataset")?;
    }

    for layout in [Layout::Biosemi128, Layout::Biosemi64] {
        let m = Montage::builtin(layout);
        let mut seen = vec![0; m.len()];
        for r in Region::ALL {
            let ch = m.channels_in(r);
            ensure(!ch.is_empty(), format!("{layout:?}: empty {r}"))?;
            ch.iter().for_each(|&c| seen[c] += 1);
        }
        ensure(seen.iter().all(|&k| k == 1), format!("{layout:?}: regions do not partition the cap"))?;
    }
    Ok("tensor and checkpoint bit-exact, manifest order-free, 5-region partition on 128 and 64 channels".into())
}

fn main() {
    let selected: Option<Vec<usize>> = std::env::var("NEUROMATCH_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let work = tempfile::tempdir().expect("temp dir");
    let w = work.path();
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Check + '_>)> = vec![
        (1, "DSP suite", Box::new(dsp_suite)),
        (2, "pooling oracle", Box::new(pooling_oracle)),
        (3, "gradient check", Box::new(gradient_check)),
        (4, "similarity and fusion algebra", Box::new(fusion_algebra)),
        (5, "synthetic natural protocol", Box::new(|| natural_protocol(w))),
        (6, "synthetic dichotic protocol", Box::new(|| dichotic_protocol(w))),
        (7, "word-boundary ablation", Box::new(|| boundary_ablation(w))),
        (8, "statistics oracle", Box::new(statistics_oracle)),
        (9, "determinism", Box::new(|| determinism(w))),
        (10, "formats", Box::new(|| formats(w))),
    ];
    let mut failed = 0;
    for (id, name, run) in &criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(id)) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or(e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {why} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
