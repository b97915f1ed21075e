//! Mini-batch training with early stopping.

mod adam;
mod folds;

pub use adam::Adam;
pub use folds::{make_folds, validation_split, FoldSpec};

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ContextKind, Mode, Model, SimVariant};
use crate::pairs::{sample_lambda, PreparedPair};
use crate::rng::{derive_seed, rng_for};
use crate::stats::PredictionRecord;

const TAG_SHUFFLE: u64 = 11;
const TAG_LAMBDA: u64 = 12;
const TAG_DROPOUT: u64 = 13;
const TAG_VAL_LAMBDA: u64 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LambdaPolicy {
    /// Each sample draws λ from `{0, 0.5, 1}`.
    Sampled,
    Fixed(f64),
}

impl std::fmt::Display for LambdaPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LambdaPolicy::Sampled => write!(f, "sampled"),
            LambdaPolicy::Fixed(v) => write!(f, "fixed={v}"),
        }
    }
}

impl TryFrom<String> for LambdaPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LambdaPolicy> for String {
    fn from(v: LambdaPolicy) -> String {
        v.to_string()
    }
}

impl std::str::FromStr for LambdaPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "sampled" {
            return Ok(LambdaPolicy::Sampled);
        }
        let v = s
            .strip_prefix("fixed=")
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| Error::Config(format!("bad lambda policy {s:?}")))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("fixed lambda {v} outside [0, 1]")));
        }
        Ok(LambdaPolicy::Fixed(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda: LambdaPolicy,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub sim: SimVariant,
    pub context: ContextKind,
    /// Share of training trials held out for early stopping.
    pub val_fraction: f64,
    /// Worker threads for per-sample gradients; 1 runs inline. Not part of
    /// the stored recipe since results do not depend on it.
    #[serde(skip, default = "one")]
    pub jobs: usize,
}

fn one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 0.001,
            weight_decay: 0.0001,
            lambda: LambdaPolicy::Sampled,
            epochs: 50,
            patience: 5,
            seed: 0,
            sim: SimVariant::Convex,
            context: ContextKind::Recurrent,
            val_fraction: 0.1,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} must be positive")));
        if self.batch_size == 0 {
            return bad("batch size");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if self.epochs == 0 {
            return bad("epoch count");
        }
        if self.patience == 0 {
            return bad("patience");
        }
        if self.jobs == 0 {
            return bad("job count");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("validation fraction must lie in [0, 1)".into()));
        }
        if let LambdaPolicy::Fixed(v) = self.lambda {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("fixed lambda {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub fold: usize,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    /// Parameters from the epoch with the lowest validation loss.
    pub params: Vec<f64>,
    pub best_epoch: usize,
    pub history: Vec<HistoryEntry>,
    /// `(subject, trial)` of every pair that entered a training batch.
    pub trained_on: BTreeSet<(String, String)>,
}

pub fn write_history<W: Write>(mut w: W, history: &[HistoryEntry]) -> Result<()> {
    for h in history {
        serde_json::to_writer(&mut w, h)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_history(path: impl AsRef<Path>, history: &[HistoryEntry]) -> Result<()> {
    let f = std::fs::File::create(path.as_ref())?;
    write_history(std::io::BufWriter::new(f), history)
}

/// Runs `f` over `items` on `jobs` threads, results in input order.
pub fn par_map<T, U, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> Result<U> + Sync + Send,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect())
}

struct BatchStats {
    loss: f64,
    correct: usize,
}

/// Mean loss and gradient over `batch`. Per-sample gradients are computed
/// independently and summed in batch order, so the result does not depend
/// on the number of worker threads.
fn batch_gradient(
    model: &Model,
    params: &[f64],
    batch: &[(&PreparedPair, f64, u64)],
    sim: SimVariant,
    jobs: usize,
    grad: &mut [f64],
) -> Result<BatchStats> {
    let per = par_map(jobs, batch, |_, (pair, lambda, seed)| {
        let mut g = vec![0.0; params.len()];
        let out = model.pair_loss(params, &pair.input(), *lambda, sim, Mode::Train { seed: *seed }, Some(&mut g))?;
        Ok((out, g))
    })?;
    grad.fill(0.0);
    let mut stats = BatchStats { loss: 0.0, correct: 0 };
    let scale = 1.0 / batch.len() as f64;
    for (out, g) in per {
        stats.loss += out.loss;
        stats.correct += usize::from(out.sim_pos > out.sim_neg);
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b * scale;
        }
    }
    stats.loss *= scale;
    Ok(stats)
}

/// Mean inference loss and accuracy; under the sampled policy each pair
/// keeps one λ for the whole run.
pub fn validation_loss(
    model: &Model,
    params: &[f64],
    pairs: &[PreparedPair],
    cfg: &TrainConfig,
    fold: usize,
) -> Result<(f64, f64)> {
    let out = par_map(cfg.jobs, pairs, |i, p| {
        let lambda = match cfg.lambda {
            LambdaPolicy::Fixed(v) => v,
            LambdaPolicy::Sampled => sample_lambda(&mut rng_for(cfg.seed, &[TAG_VAL_LAMBDA, fold as u64, i as u64])),
        };
        model.pair_loss(params, &p.input(), lambda, cfg.sim, Mode::Inference, None)
    })?;
    let n = out.len().max(1) as f64;
    let loss = out.iter().map(|o| o.loss).sum::<f64>() / n;
    let acc = 100.0 * out.iter().filter(|o| o.sim_pos > o.sim_neg).count() as f64 / n;
    Ok((loss, acc))
}

/// Trains one fold from `init`. Every epoch shuffles the training pairs,
/// draws λ per sample, and steps Adam once per batch; the parameters with
/// the lowest validation loss are returned. Without validation pairs the
/// last epoch wins.
pub fn train_fold(
    model: &Model,
    init: Vec<f64>,
    fold: usize,
    train: &[PreparedPair],
    val: &[PreparedPair],
    cfg: &TrainConfig,
) -> Result<FoldOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput(format!("fold {fold} has no training pairs")));
    }
    let diverged = |epoch: usize, reason: String| Error::Divergence { fold, epoch, reason };
    let mut params = init;
    let mut opt = Adam::new(params.len(), cfg.learning_rate, cfg.weight_decay);
    let mut grad = vec![0.0; params.len()];
    let mut history = Vec::new();
    let mut trained_on = BTreeSet::new();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut stale = 0;
    let f = fold as u64;

    for epoch in 0..cfg.epochs {
        let e = epoch as u64;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[TAG_SHUFFLE, f, e]));
        let mut lambda_rng = rng_for(cfg.seed, &[TAG_LAMBDA, f, e]);
        let plan: Vec<(&PreparedPair, f64, u64)> = order
            .iter()
            .map(|&i| {
                let lambda = match cfg.lambda {
                    LambdaPolicy::Fixed(v) => v,
                    LambdaPolicy::Sampled => sample_lambda(&mut lambda_rng),
                };
                (&train[i], lambda, derive_seed(cfg.seed, &[TAG_DROPOUT, f, e, i as u64]))
            })
            .collect();

        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in plan.chunks(cfg.batch_size) {
            for (p, _, _) in batch {
                trained_on.insert((p.subject.clone(), p.trial.clone()));
            }
            let stats = batch_gradient(model, &params, batch, cfg.sim, cfg.jobs, &mut grad)
                .map_err(|err| diverged(epoch, err.to_string()))?;
            if !stats.loss.is_finite() {
                return Err(diverged(epoch, format!("training loss {}", stats.loss)));
            }
            opt.step(&mut params, &grad).map_err(|err| diverged(epoch, err.to_string()))?;
            loss_sum += stats.loss * batch.len() as f64;
            correct += stats.correct;
        }
        let n = train.len() as f64;
        history.push(HistoryEntry {
            fold,
            epoch,
            split: "train".into(),
            loss: loss_sum / n,
            accuracy: 100.0 * correct as f64 / n,
        });

        if val.is_empty() {
            best = Some((f64::NAN, epoch, params.clone()));
            continue;
        }
        let (vloss, vacc) = validation_loss(model, &params, val, cfg, fold)?;
        if !vloss.is_finite() {
            return Err(diverged(epoch, format!("validation loss {vloss}")));
        }
        history.push(HistoryEntry {
            fold,
            epoch,
            split: "val".into(),
            loss: vloss,
            accuracy: vacc,
        });
        if best.as_ref().map_or(true, |b| vloss < b.0) {
            best = Some((vloss, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(FoldOutcome {
        fold,
        params,
        best_epoch,
        history,
        trained_on,
    })
}

/// Scores every pair at `lambda`.
pub fn predict(
    model: &Model,
    params: &[f64],
    pairs: &[PreparedPair],
    lambda: f64,
    sim: SimVariant,
    fold: usize,
    jobs: usize,
) -> Result<Vec<PredictionRecord>> {
    par_map(jobs, pairs, |_, p| {
        let out = model.pair_loss(params, &p.input(), lambda, sim, Mode::Inference, None)?;
        Ok(PredictionRecord {
            pair_id: p.id.clone(),
            fold,
            lambda,
            sim_pos: out.sim_pos,
            sim_neg: out.sim_neg,
        })
    })
}

#[cfg(test)]
mod tests;
