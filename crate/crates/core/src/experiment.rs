//! Corpus loading and cross-validated experiments.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Behavior, Dataset, Ear, Protocol, Split, TensorBlob, TrialStimulus};
use crate::dichotic::{select_trials, split_by_ear, Retention};
use crate::error::{Error, Result};
use crate::model::{Mat, Model, ModelConfig};
use crate::pairs::{
    make_dichotic_pairs, make_natural_pairs, DichoticTrial, MmPair, PairSet, PreparedPair, Segment, StreamFeatures,
    StreamSentence,
};
use crate::preproc::{Montage, Region};
use crate::rng::{derive_seed, hash_id, rng_for};
use crate::stats::{EarResult, PredictionRecord};
use crate::stimulus::{compute_envelope, embed_words, BoundaryMode, EmbeddingTable, SentenceStimulus, FEATURE_RATE};
use crate::trainer::{make_folds, predict, train_fold, validation_split, FoldOutcome, FoldSpec, TrainConfig};

const TAG_FOLDS: u64 = 21;
const TAG_VAL: u64 = 22;
const TAG_PAIRS: u64 = 23;
const TAG_PREPARE: u64 = 24;
const TAG_INIT: u64 = 25;
const TAG_SHUFFLE_LABELS: u64 = 26;
const TAG_EARS: u64 = 27;

#[derive(Debug, Clone, PartialEq)]
pub enum TrialContent {
    Natural(Vec<Segment>),
    Dichotic(DichoticTrial),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusTrial {
    pub subject: String,
    pub trial: String,
    pub split: Split,
    pub behavior: Option<Behavior>,
    pub content: TrialContent,
}

/// Preprocessed EEG with stimulus features, ready for pair construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub protocol: Protocol,
    pub montage: Montage,
    pub channels: usize,
    pub text_dim: usize,
    /// Sorted by `(subject, trial)`.
    pub trials: Vec<CorpusTrial>,
    /// Words missing from the embedding table (zero vectors were used).
    pub oov_words: usize,
}

impl Corpus {
    pub fn trial_ids(&self) -> Vec<String> {
        let ids: BTreeSet<&String> = self.trials.iter().map(|t| &t.trial).collect();
        ids.into_iter().cloned().collect()
    }
}

fn frames(t: f64) -> usize {
    (t * FEATURE_RATE).round().max(0.0) as usize
}

/// Loads every trial of a manifest. EEG must already be at 64 Hz.
pub fn load_corpus(ds: &Dataset) -> Result<Corpus> {
    let protocol = ds.protocol()?;
    let table = match &ds.embeddings {
        Some(p) => EmbeddingTable::load(p)?,
        None => return Err(Error::Config("manifest names no embedding table".into())),
    };
    let mut envelopes: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (id, a) in &ds.audio {
        let blob = TensorBlob::load(&a.path)?;
        envelopes.insert(id, compute_envelope(&blob.data, a.rate)?);
    }
    let mut oov_words = 0;
    let mut sentence = |id: &str| -> Result<StreamSentence> {
        let s = &ds.sentences[id];
        let (embeddings, oov) = embed_words(&s.tokens, &table);
        oov_words += oov.iter().filter(|&&o| o).count();
        Ok(StreamSentence {
            id: s.id.clone(),
            onset_s: s.onset_s,
            duration_s: s.duration_s,
            tokens: s.tokens.clone(),
            embeddings,
        })
    };

    let mut trials = Vec::with_capacity(ds.len());
    let mut channels = None;
    for t in ds.trials.values() {
        if t.rate != FEATURE_RATE {
            return Err(Error::Config(format!(
                "EEG of {}/{} is at {} Hz; run preprocess first",
                t.subject, t.trial, t.rate
            )));
        }
        let eeg = TensorBlob::load(&t.eeg_path)?.to_mat()?;
        if *channels.get_or_insert(eeg.rows) != eeg.rows {
            return Err(Error::Shape(format!("{}/{} has {} channels", t.subject, t.trial, eeg.rows)));
        }
        let content = match &t.stimulus {
            TrialStimulus::Natural(ids) => {
                let mut segments = Vec::with_capacity(ids.len());
                for id in ids {
                    let s = sentence(id)?;
                    let env = &envelopes[ds.sentences[id].audio.as_str()];
                    let a = frames(s.onset_s);
                    let b = (a + frames(s.duration_s)).min(eeg.cols).min(env.len());
                    if b <= a {
                        return Err(Error::InvalidInput(format!("sentence {id} lies outside trial {}", t.trial)));
                    }
                    let rows: Vec<Vec<f64>> = (0..eeg.rows).map(|c| eeg.row(c)[a..b].to_vec()).collect();
                    let stim = SentenceStimulus {
                        id: s.id,
                        envelope: env[a..b].to_vec(),
                        tokens: s.tokens,
                        embeddings: s.embeddings,
                    }
                    .fit_to(b - a);
                    segments.push(Segment {
                        subject: t.subject.clone(),
                        trial: t.trial.clone(),
                        eeg: Mat::from_rows(&rows)?,
                        stimulus: stim,
                    });
                }
                TrialContent::Natural(segments)
            }
            TrialStimulus::Dichotic { left, right } => {
                let mut stream = |ids: &[String]| -> Result<StreamFeatures> {
                    let audio = ids.first().map(|id| ds.sentences[id].audio.clone()).unwrap_or_default();
                    Ok(StreamFeatures {
                        envelope: envelopes.get(audio.as_str()).cloned().unwrap_or_default(),
                        id: audio,
                        sentences: ids.iter().map(|id| sentence(id)).collect::<Result<_>>()?,
                    })
                };
                let attended = t
                    .behavior
                    .as_ref()
                    .map(|b| b.attended_ear)
                    .ok_or_else(|| Error::InvalidInput(format!("{}/{} has no attended ear", t.subject, t.trial)))?;
                TrialContent::Dichotic(DichoticTrial {
                    subject: t.subject.clone(),
                    trial: t.trial.clone(),
                    attended,
                    left: stream(left)?,
                    right: stream(right)?,
                    eeg,
                })
            }
        };
        trials.push(CorpusTrial {
            subject: t.subject.clone(),
            trial: t.trial.clone(),
            split: t.split,
            behavior: t.behavior,
            content,
        });
    }
    let channels = channels.unwrap_or(0);
    let montage = match &ds.montage {
        Some(p) => Montage::load(p)?,
        None => Montage::for_channels(channels)?,
    };
    if !trials.is_empty() && montage.len() != channels {
        return Err(Error::Shape(format!("montage has {} channels, EEG has {channels}", montage.len())));
    }
    Ok(Corpus {
        protocol,
        montage,
        channels,
        text_dim: table.dim(),
        trials,
        oov_words,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    /// Architecture template; channel count and word-vector size come from
    /// the corpus.
    pub model: ModelConfig,
    /// Zero means one fold taken from the manifest's split fields.
    pub folds: usize,
    pub test_per_fold: usize,
    pub allow_overlap: bool,
    pub boundaries: BoundaryMode,
    /// Apply behavioural trial selection (dichotic corpora).
    pub select_trials: bool,
    /// Swap matched and mismatched stimuli in a random half of the
    /// training pairs (control run).
    pub shuffle_labels: bool,
    pub eval_lambdas: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            folds: 6,
            test_per_fold: 3,
            allow_overlap: false,
            boundaries: BoundaryMode::True,
            select_trials: true,
            shuffle_labels: false,
            eval_lambdas: vec![0.0, 0.5, 1.0],
        }
    }
}

impl ExperimentConfig {
    pub fn model_for(&self, corpus: &Corpus, channels: usize) -> ModelConfig {
        ModelConfig {
            eeg_channels: channels,
            text_dim: corpus.text_dim,
            context: self.train.context,
            ..self.model.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Train,
    Val,
    Test,
}

/// Trials that take part: all of them, or the behaviourally selected ones.
pub fn eligible_trials<'a>(corpus: &'a Corpus, cfg: &ExperimentConfig) -> (Vec<&'a CorpusTrial>, Retention, Retention) {
    if corpus.protocol != Protocol::Dichotic || !cfg.select_trials {
        return (corpus.trials.iter().collect(), Retention::default(), Retention::default());
    }
    let refs: Vec<crate::data::TrialRef> = corpus
        .trials
        .iter()
        .map(|t| crate::data::TrialRef {
            subject: t.subject.clone(),
            trial: t.trial.clone(),
            split: t.split,
            eeg_path: Default::default(),
            rate: FEATURE_RATE,
            stimulus: TrialStimulus::Natural(vec![]),
            behavior: t.behavior,
        })
        .collect();
    let sel = select_trials(&refs);
    let kept: BTreeSet<(String, String)> = sel.kept.iter().map(|t| (t.subject.clone(), t.trial.clone())).collect();
    let trials = corpus
        .trials
        .iter()
        .filter(|t| kept.contains(&(t.subject.clone(), t.trial.clone())))
        .collect();
    (trials, sel.left, sel.right)
}

/// Folds over trial ids. With `folds == 0` the manifest splits define a
/// single fold.
pub fn plan_folds(corpus: &Corpus, cfg: &ExperimentConfig) -> Result<Vec<FoldSpec>> {
    if cfg.folds == 0 {
        return Ok(vec![FoldSpec {
            id: 0,
            train: Vec::new(),
            test: Vec::new(),
        }]);
    }
    make_folds(
        &corpus.trial_ids(),
        cfg.folds,
        cfg.test_per_fold,
        cfg.allow_overlap,
        &mut rng_for(cfg.train.seed, &[TAG_FOLDS]),
    )
}

fn roles(corpus: &Corpus, fold: &FoldSpec, cfg: &ExperimentConfig) -> BTreeMap<(String, String), Role> {
    if cfg.folds == 0 {
        return corpus
            .trials
            .iter()
            .map(|t| {
                let r = match t.split {
                    Split::Train => Role::Train,
                    Split::Val => Role::Val,
                    Split::Test => Role::Test,
                };
                ((t.subject.clone(), t.trial.clone()), r)
            })
            .collect();
    }
    let (_, val) = validation_split(
        &fold.train,
        cfg.train.val_fraction,
        &mut rng_for(cfg.train.seed, &[TAG_VAL, fold.id as u64]),
    );
    corpus
        .trials
        .iter()
        .filter_map(|t| {
            let r = if fold.test.contains(&t.trial) {
                Role::Test
            } else if val.contains(&t.trial) {
                Role::Val
            } else if fold.train.contains(&t.trial) {
                Role::Train
            } else {
                return None;
            };
            Some(((t.subject.clone(), t.trial.clone()), r))
        })
        .collect()
}

/// Pairs of one fold, built separately inside each split so no mismatched
/// stimulus crosses a split boundary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FoldPairs {
    pub train: Vec<MmPair>,
    pub val: Vec<MmPair>,
    pub test: Vec<MmPair>,
    pub skipped: Vec<String>,
}

pub fn fold_pairs(trials: &[&CorpusTrial], corpus: &Corpus, fold: &FoldSpec, cfg: &ExperimentConfig) -> FoldPairs {
    let roles = roles(corpus, fold, cfg);
    let mut out = FoldPairs::default();
    for (k, role) in [Role::Train, Role::Val, Role::Test].into_iter().enumerate() {
        let mut set = PairSet::default();
        let members: Vec<&&CorpusTrial> = trials
            .iter()
            .filter(|t| roles.get(&(t.subject.clone(), t.trial.clone())) == Some(&role))
            .collect();
        let mut sessions: BTreeMap<&str, Vec<Segment>> = BTreeMap::new();
        for t in members {
            match &t.content {
                TrialContent::Natural(segs) => sessions.entry(&t.subject).or_default().extend(segs.iter().cloned()),
                TrialContent::Dichotic(d) => set.extend(make_dichotic_pairs(d)),
            }
        }
        for (subject, segs) in sessions {
            let mut rng = rng_for(cfg.train.seed, &[TAG_PAIRS, fold.id as u64, k as u64, hash_id(subject)]);
            set.extend(make_natural_pairs(&segs, &mut rng));
        }
        out.skipped.extend(set.skipped);
        match role {
            Role::Train => out.train = set.pairs,
            Role::Val => out.val = set.pairs,
            Role::Test => out.test = set.pairs,
        }
    }
    if cfg.shuffle_labels {
        let mut rng = rng_for(cfg.train.seed, &[TAG_SHUFFLE_LABELS, fold.id as u64]);
        for p in out.train.iter_mut().chain(out.val.iter_mut()) {
            if rng.gen_bool(0.5) {
                *p = p.swapped();
            }
        }
    }
    out
}

pub fn prepare(
    pairs: &[MmPair],
    mode: BoundaryMode,
    channels: Option<&[usize]>,
    seed: u64,
    path: &[u64],
) -> Result<Vec<PreparedPair>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut full = path.to_vec();
            full.push(i as u64);
            PreparedPair::new(p, mode, channels, &mut rng_for(seed, &full))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub spec: FoldSpec,
    pub outcome: FoldOutcome,
    pub model: ModelConfig,
    /// One record list per evaluation λ, in `eval_lambdas` order.
    pub predictions: Vec<(f64, Vec<PredictionRecord>)>,
    pub test_trials: BTreeSet<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub skipped: Vec<String>,
}

impl CvResult {
    /// Records pooled over folds, per evaluation λ.
    pub fn by_lambda(&self) -> Vec<(f64, Vec<PredictionRecord>)> {
        let Some(first) = self.folds.first() else {
            return Vec::new();
        };
        first
            .predictions
            .iter()
            .enumerate()
            .map(|(i, (l, _))| (*l, self.folds.iter().flat_map(|f| f.predictions[i].1.clone()).collect()))
            .collect()
    }

    pub fn records_at(&self, lambda: f64) -> Vec<PredictionRecord> {
        self.by_lambda().into_iter().find(|(l, _)| *l == lambda).map(|x| x.1).unwrap_or_default()
    }

    /// The λ = 0.5 records, or those of the first evaluation λ.
    pub fn headline(&self) -> Vec<PredictionRecord> {
        headline(&self.by_lambda())
    }
}

/// Region, ear and boundary tables compare models at λ = 0.5 when it was
/// evaluated, else at the first evaluated λ.
pub fn headline(by_lambda: &[(f64, Vec<PredictionRecord>)]) -> Vec<PredictionRecord> {
    by_lambda
        .iter()
        .find(|(l, _)| *l == 0.5)
        .or_else(|| by_lambda.first())
        .map(|x| x.1.clone())
        .unwrap_or_default()
}

fn prepare_role(
    pairs: &[MmPair],
    cfg: &ExperimentConfig,
    channels: Option<&[usize]>,
    stream: u64,
    fold: usize,
    role: u64,
) -> Result<Vec<PreparedPair>> {
    prepare(pairs, cfg.boundaries, channels, cfg.train.seed, &[TAG_PREPARE, stream, fold as u64, role])
}

fn predict_all(
    model: &Model,
    params: &[f64],
    test: &[PreparedPair],
    cfg: &ExperimentConfig,
    fold: usize,
) -> Result<Vec<(f64, Vec<PredictionRecord>)>> {
    cfg.eval_lambdas
        .iter()
        .map(|&l| Ok((l, predict(model, params, test, l, cfg.train.sim, fold, cfg.train.jobs)?)))
        .collect()
}

pub fn run_fold(
    corpus: &Corpus,
    cfg: &ExperimentConfig,
    spec: &FoldSpec,
    pairs: &FoldPairs,
    channels: Option<&[usize]>,
    stream: u64,
) -> Result<FoldResult> {
    let n_channels = channels.map_or(corpus.channels, <[usize]>::len);
    let model_cfg = cfg.model_for(corpus, n_channels);
    let model = Model::new(model_cfg.clone())?;
    let train = prepare_role(&pairs.train, cfg, channels, stream, spec.id, 0)?;
    let val = prepare_role(&pairs.val, cfg, channels, stream, spec.id, 1)?;
    let test = prepare_role(&pairs.test, cfg, channels, stream, spec.id, 2)?;
    if test.is_empty() {
        return Err(Error::InvalidInput(format!("fold {} has no test pairs", spec.id)));
    }
    let init = model.init_params(derive_seed(cfg.train.seed, &[TAG_INIT, spec.id as u64]));
    let outcome = train_fold(&model, init, spec.id, &train, &val, &cfg.train)?;
    let predictions = predict_all(&model, &outcome.params, &test, cfg, spec.id)?;
    Ok(FoldResult {
        spec: spec.clone(),
        outcome,
        model: model_cfg,
        predictions,
        test_trials: pairs.test.iter().map(|p| (p.subject.clone(), p.trial.clone())).collect(),
    })
}

/// Predictions of already trained parameters on the test pairs of one
/// fold. Matches the predictions [`run_fold`] made when it trained them.
pub fn evaluate_fold(
    corpus: &Corpus,
    cfg: &ExperimentConfig,
    spec: &FoldSpec,
    pairs: &FoldPairs,
    model: &Model,
    params: &[f64],
) -> Result<Vec<(f64, Vec<PredictionRecord>)>> {
    if model.config().eeg_channels != corpus.channels || model.config().text_dim != corpus.text_dim {
        return Err(Error::Config(format!(
            "model expects {} channels and {}-d word vectors, corpus has {} and {}",
            model.config().eeg_channels,
            model.config().text_dim,
            corpus.channels,
            corpus.text_dim
        )));
    }
    let test = prepare_role(&pairs.test, cfg, None, 0, spec.id, 2)?;
    if test.is_empty() {
        return Err(Error::InvalidInput(format!("fold {} has no test pairs", spec.id)));
    }
    predict_all(model, params, &test, cfg, spec.id)
}

/// Cross-validation on all channels, or on `channels` when given.
pub fn run_cv(corpus: &Corpus, cfg: &ExperimentConfig, channels: Option<&[usize]>) -> Result<CvResult> {
    run_cv_with(corpus, cfg, channels, |_| {})
}

/// [`run_cv`] with a callback after each finished fold.
pub fn run_cv_with(
    corpus: &Corpus,
    cfg: &ExperimentConfig,
    channels: Option<&[usize]>,
    mut on_fold: impl FnMut(&FoldResult),
) -> Result<CvResult> {
    let (trials, _, _) = eligible_trials(corpus, cfg);
    let mut folds = Vec::new();
    let mut skipped = Vec::new();
    for spec in plan_folds(corpus, cfg)? {
        let pairs = fold_pairs(&trials, corpus, &spec, cfg);
        skipped.extend(pairs.skipped.iter().cloned());
        let r = run_fold(corpus, cfg, &spec, &pairs, channels, 0)?;
        on_fold(&r);
        folds.push(r);
    }
    Ok(CvResult { folds, skipped })
}

/// One model per scalp region.
pub fn run_regions(corpus: &Corpus, cfg: &ExperimentConfig, regions: &[Region]) -> Result<Vec<(Region, CvResult)>> {
    regions
        .iter()
        .map(|&r| {
            let ch = corpus.montage.channels_in(r);
            if ch.is_empty() {
                return Err(Error::InvalidInput(format!("montage has no {r} channels")));
            }
            Ok((r, run_cv(corpus, cfg, Some(&ch))?))
        })
        .collect()
}

/// Separate models for listeners attending the left (S1) and the right
/// (S2) ear. Training pairs of the larger group are downsampled so both
/// groups train on the same number of pairs; test pairs are untouched.
pub fn run_ears(corpus: &Corpus, cfg: &ExperimentConfig) -> Result<Vec<EarResult>> {
    if corpus.protocol != Protocol::Dichotic {
        return Err(Error::Config("ear analysis needs a dichotic corpus".into()));
    }
    let (trials, left, right) = eligible_trials(corpus, cfg);
    let ear_of: BTreeMap<(String, String), Ear> = trials
        .iter()
        .filter_map(|t| t.behavior.as_ref().map(|b| ((t.subject.clone(), t.trial.clone()), b.attended_ear)))
        .collect();
    let key = |p: &MmPair| ear_of[&(p.subject.clone(), p.trial.clone())];
    let mut out: Vec<EarResult> = [(Ear::Left, left), (Ear::Right, right)]
        .into_iter()
        .map(|(ear, r)| EarResult {
            ear,
            kept: r.kept,
            total: r.total,
            train_pairs: 0,
            records: Vec::new(),
        })
        .collect();
    for spec in plan_folds(corpus, cfg)? {
        let pairs = fold_pairs(&trials, corpus, &spec, cfg);
        let f = spec.id as u64;
        let train = split_by_ear(pairs.train, key, &mut rng_for(cfg.train.seed, &[TAG_EARS, f, 0]))?;
        let val = split_by_ear(pairs.val, key, &mut rng_for(cfg.train.seed, &[TAG_EARS, f, 1])).ok();
        for (k, ear) in [Ear::Left, Ear::Right].into_iter().enumerate() {
            let group = FoldPairs {
                train: train.group(ear).to_vec(),
                val: val.as_ref().map(|v| v.group(ear).to_vec()).unwrap_or_default(),
                test: pairs.test.iter().filter(|p| key(p) == ear).cloned().collect(),
                skipped: Vec::new(),
            };
            if group.test.is_empty() {
                continue;
            }
            let r = run_fold(corpus, cfg, &spec, &group, None, 1 + k as u64)?;
            out[k].train_pairs += group.train.len();
            out[k].records.extend(headline(&r.predictions));
        }
    }
    Ok(out)
}
