use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use neuromatch::data::{generate_synthetic, load_manifest, SynthConfig};
use neuromatch::experiment::{
    evaluate_fold, fold_pairs, eligible_trials, headline, load_corpus, plan_folds, run_cv, run_cv_with, run_ears,
    run_regions, Corpus, CvResult, ExperimentConfig, FoldResult,
};
use neuromatch::model::Checkpoint;
use neuromatch::pipeline::preprocess_dataset;
use neuromatch::preproc::{PreprocConfig, Region};
use neuromatch::stats::{emit_reports, mm_accuracy, EvalResults, PredictionRecord, RegionResult};
use neuromatch::stimulus::BoundaryMode;
use neuromatch::trainer::{write_history, FoldSpec, HistoryEntry};

use crate::overrides;
use crate::{EvaluateArgs, PreprocessArgs, SynthArgs, TrainArgs, TrainingOptions};

pub enum Failure {
    Usage(String),
    Runtime(neuromatch::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Runtime(e) => {
                write!(f, "{e}")?;
                let mut src = std::error::Error::source(e);
                while let Some(s) = src {
                    write!(f, ": {s}")?;
                    src = s.source();
                }
                Ok(())
            }
        }
    }
}

impl<E: Into<neuromatch::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

const CONFIG_FILE: &str = "train_config.json";
const FOLDS_FILE: &str = "folds.json";
const HISTORY_FILE: &str = "history.jsonl";
const SUMMARY_FILE: &str = "fold_summary.tsv";

pub fn checkpoint_path(dir: &Path, fold: usize) -> PathBuf {
    dir.join(format!("fold_{fold}.nmck"))
}

pub fn synth(a: SynthArgs) -> Outcome {
    let mut cfg = SynthConfig {
        seed: a.seed,
        ..SynthConfig::default()
    };
    if let Some(p) = a.protocol {
        cfg.protocol = p;
    }
    if let Some(n) = a.subjects {
        cfg.n_subjects = n;
    }
    if let Some(n) = a.trials {
        cfg.n_trials = n;
    }
    if let Some(n) = a.channels {
        cfg.channels = n;
    }
    if let Some(s) = a.snr_db {
        cfg.snr_db = match s.as_str() {
            "off" => None,
            v => Some(v.parse().map_err(|_| Failure::Usage(format!("bad --snr-db {v:?}")))?),
        };
    }
    let cfg = overrides::apply(&cfg, &a.sets).map_err(Failure::Usage)?;
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let manifest = generate_synthetic(&cfg, &a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

pub fn preprocess(a: PreprocessArgs) -> Outcome {
    let cfg = overrides::apply(&PreprocConfig::default(), &a.sets).map_err(Failure::Usage)?;
    let (manifest, reports) = preprocess_dataset(&a.manifest, &a.out, &cfg, a.jobs.max(1))?;
    for r in reports.iter().filter(|r| !r.rejected.is_empty()) {
        eprintln!("{}/{}: rejected {}", r.subject, r.trial, r.rejected_labels.join(","));
    }
    eprintln!("{} recordings at {} Hz", reports.len(), cfg.target_rate);
    println!("{}", manifest.display());
    Ok(())
}

fn load(manifest: &Path, opts: &TrainingOptions) -> Result<Corpus, Failure> {
    let corpus = load_corpus(&load_manifest(manifest)?)?;
    if let Some(p) = opts.protocol {
        if p != corpus.protocol {
            return Err(Failure::Usage(format!("--protocol {p} but the corpus is {}", corpus.protocol)));
        }
    }
    if corpus.oov_words > 0 {
        eprintln!("{} words missing from the embedding table", corpus.oov_words);
    }
    Ok(corpus)
}

/// Applies the command-line options on top of `base`.
fn configure(base: ExperimentConfig, opts: &TrainingOptions) -> Result<ExperimentConfig, Failure> {
    let mut cfg = base;
    if let Some(l) = opts.lambda {
        cfg.train.lambda = l;
    }
    if let Some(s) = opts.sim {
        cfg.train.sim = s;
    }
    if let Some(c) = opts.context {
        cfg.train.context = c;
    }
    if let Some(k) = opts.folds {
        cfg.folds = k;
    }
    if let Some(n) = opts.test_per_fold {
        cfg.test_per_fold = n;
    }
    if let Some(e) = opts.epochs {
        cfg.train.epochs = e;
    }
    if let Some(p) = opts.patience {
        cfg.train.patience = p;
    }
    cfg.shuffle_labels |= opts.shuffle_labels;
    cfg.select_trials &= !opts.no_trial_selection;
    cfg.train.jobs = opts.jobs.max(1);
    let cfg = overrides::apply(&cfg, &opts.sets).map_err(Failure::Usage)?;
    cfg.train.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(neuromatch::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(neuromatch::Error::from)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| {
        neuromatch::Error::InvalidInput(format!("{}: {e}", path.display()))
    })?;
    Ok(serde_json::from_str(&text).map_err(neuromatch::Error::from)?)
}

fn accuracy_line(predictions: &[(f64, Vec<PredictionRecord>)]) -> String {
    predictions
        .iter()
        .map(|(l, r)| format!("λ={l} {:.2}%", mm_accuracy(r).unwrap_or(f64::NAN)))
        .collect::<Vec<_>>()
        .join("  ")
}

pub fn train(a: TrainArgs) -> Outcome {
    let corpus = load(&a.manifest, &a.opts)?;
    let mut base = ExperimentConfig::default();
    base.train.seed = a.seed;
    if let Some(m) = a.word_boundaries {
        base.boundaries = m;
    }
    let cfg = configure(base, &a.opts)?;
    fs::create_dir_all(&a.out).map_err(neuromatch::Error::from)?;
    write_json(&a.out.join(CONFIG_FILE), &cfg)?;
    let folds = plan_folds(&corpus, &cfg)?;
    write_json(&a.out.join(FOLDS_FILE), &folds)?;

    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut summary = String::from("fold\tbest_epoch\ttest_pairs");
    for l in &cfg.eval_lambdas {
        summary.push_str(&format!("\taccuracy_lambda_{l}"));
    }
    summary.push('\n');
    let mut saved: Result<(), neuromatch::Error> = Ok(());
    let cv = run_cv_with(&corpus, &cfg, None, |f: &FoldResult| {
        let ck = Checkpoint::new(f.model.clone(), f.outcome.params.clone()).and_then(|c| c.save(checkpoint_path(&a.out, f.spec.id)));
        if saved.is_ok() {
            saved = ck;
        }
        history.extend(f.outcome.history.iter().cloned());
        summary.push_str(&format!("{}\t{}\t{}", f.spec.id, f.outcome.best_epoch, f.predictions[0].1.len()));
        for (_, r) in &f.predictions {
            summary.push_str(&format!("\t{:.4}", mm_accuracy(r).unwrap_or(f64::NAN)));
        }
        summary.push('\n');
        eprintln!("fold {}: best epoch {}, {}", f.spec.id, f.outcome.best_epoch, accuracy_line(&f.predictions));
    })?;
    saved?;
    let mut buf = Vec::new();
    write_history(&mut buf, &history)?;
    fs::write(a.out.join(HISTORY_FILE), buf).map_err(neuromatch::Error::from)?;
    fs::write(a.out.join(SUMMARY_FILE), summary).map_err(neuromatch::Error::from)?;
    if !cv.skipped.is_empty() {
        eprintln!("{} pairing notes, e.g. {}", cv.skipped.len(), cv.skipped[0]);
    }
    eprintln!("overall: {}", accuracy_line(&cv.by_lambda()));
    println!("{}", a.out.display());
    Ok(())
}

/// Predictions of the stored fold checkpoints.
fn evaluate_stored(corpus: &Corpus, cfg: &ExperimentConfig, models: &Path) -> Result<Vec<(f64, Vec<PredictionRecord>)>, Failure> {
    let folds = plan_folds(corpus, cfg)?;
    let stored: Vec<FoldSpec> = read_json(&models.join(FOLDS_FILE))?;
    if stored != folds {
        return Err(Failure::Runtime(neuromatch::Error::Config(
            "stored folds do not match this corpus".into(),
        )));
    }
    let (trials, _, _) = eligible_trials(corpus, cfg);
    let mut out: Vec<(f64, Vec<PredictionRecord>)> = cfg.eval_lambdas.iter().map(|&l| (l, Vec::new())).collect();
    for spec in &folds {
        let pairs = fold_pairs(&trials, corpus, spec, cfg);
        let ck = Checkpoint::load(checkpoint_path(models, spec.id))?;
        let model = ck.model()?;
        let preds = evaluate_fold(corpus, cfg, spec, &pairs, &model, &ck.params)?;
        eprintln!("fold {}: {}", spec.id, accuracy_line(&preds));
        for (slot, (_, r)) in out.iter_mut().zip(preds) {
            slot.1.extend(r);
        }
    }
    Ok(out)
}

fn parse_regions(s: &str) -> Result<Vec<Region>, Failure> {
    if s == "all" {
        return Ok(Region::ALL.to_vec());
    }
    s.split(',')
        .map(|r| r.trim().parse::<Region>().map_err(|e| Failure::Usage(e.to_string())))
        .collect()
}

pub fn evaluate(a: EvaluateArgs) -> Outcome {
    let corpus = load(&a.manifest, &a.opts)?;
    let regions = a.regions.as_deref().map(parse_regions).transpose()?;
    let (main_cfg, lambdas) = match &a.models {
        Some(dir) => {
            let mut cfg: ExperimentConfig = read_json(&dir.join(CONFIG_FILE))?;
            if a.seed.is_some_and(|s| s != cfg.train.seed) {
                return Err(Failure::Usage(format!("--seed differs from the stored seed {}", cfg.train.seed)));
            }
            cfg.train.jobs = a.opts.jobs.max(1);
            if !a.lambdas.is_empty() {
                cfg.eval_lambdas = a.lambdas.clone();
            }
            let lambdas = evaluate_stored(&corpus, &cfg, dir)?;
            (cfg, lambdas)
        }
        None => {
            let seed = a
                .seed
                .ok_or_else(|| Failure::Usage("--seed is required without --models".into()))?;
            let mut base = ExperimentConfig::default();
            base.train.seed = seed;
            let mut cfg = configure(base, &a.opts)?;
            if !a.lambdas.is_empty() {
                cfg.eval_lambdas = a.lambdas.clone();
            }
            let cv = run_cv_with(&corpus, &cfg, None, |f| {
                eprintln!("fold {}: {}", f.spec.id, accuracy_line(&f.predictions));
            })?;
            (cfg, cv.by_lambda())
        }
    };
    eprintln!("overall: {}", accuracy_line(&lambdas));

    // analyses that need new models train with the stored recipe plus any
    // options given here
    let mut retrain = configure(main_cfg.clone(), &a.opts)?;
    retrain.eval_lambdas = vec![0.5];

    let mut results = EvalResults {
        lambdas: lambdas.clone(),
        ..EvalResults::default()
    };
    if let Some(regions) = regions {
        for (region, cv) in run_regions(&corpus, &retrain, &regions)? {
            let records = cv.headline();
            eprintln!("region {region}: {:.2}%", mm_accuracy(&records)?);
            results.regions.push(RegionResult {
                region,
                channels: corpus.montage.channels_in(region).len(),
                records,
            });
        }
    }
    if a.ears {
        results.ears = run_ears(&corpus, &retrain)?.into_iter().filter(|e| !e.records.is_empty()).collect();
    }
    if !a.word_boundaries.is_empty() {
        results.boundaries.push((main_cfg.boundaries, headline(&lambdas)));
        for &mode in a.word_boundaries.iter().filter(|&&m| m != main_cfg.boundaries) {
            let cfg = ExperimentConfig {
                boundaries: mode,
                ..retrain.clone()
            };
            let cv: CvResult = run_cv(&corpus, &cfg, None)?;
            let records = cv.headline();
            eprintln!("boundaries {mode}: {:.2}%", mm_accuracy(&records)?);
            results.boundaries.push((mode, records));
        }
        if main_cfg.boundaries != BoundaryMode::True {
            eprintln!("note: the main run does not use true word boundaries");
        }
    }
    fs::create_dir_all(&a.out).map_err(neuromatch::Error::from)?;
    for path in emit_reports(&results, &a.out)? {
        println!("{}", path.display());
    }
    Ok(())
}
