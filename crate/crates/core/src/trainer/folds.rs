use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub id: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// `k` folds with `test_per_fold` test trials each. Test sets are disjoint
/// when `k · test_per_fold` fits in the trial list; otherwise the call fails
/// unless `allow_overlap`, in which case each fold draws its own test set.
pub fn make_folds<R: Rng>(
    trial_ids: &[String],
    k: usize,
    test_per_fold: usize,
    allow_overlap: bool,
    rng: &mut R,
) -> Result<Vec<FoldSpec>> {
    if k == 0 || test_per_fold == 0 {
        return Err(Error::Config("fold count and test size must be positive".into()));
    }
    let mut ids = trial_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != trial_ids.len() {
        return Err(Error::InvalidInput("duplicate trial ids".into()));
    }
    let n = ids.len();
    if test_per_fold >= n {
        return Err(Error::Config(format!(
            "{test_per_fold} test trials per fold leaves no training data among {n} trials"
        )));
    }
    let tests: Vec<Vec<String>> = if k * test_per_fold <= n {
        let mut order = ids.clone();
        order.shuffle(rng);
        order.chunks(test_per_fold).take(k).map(<[String]>::to_vec).collect()
    } else if allow_overlap {
        (0..k)
            .map(|_| ids.choose_multiple(rng, test_per_fold).cloned().collect())
            .collect()
    } else {
        return Err(Error::Config(format!(
            "{k} folds of {test_per_fold} test trials need {} trials, have {n}",
            k * test_per_fold
        )));
    };
    Ok(tests
        .into_iter()
        .enumerate()
        .map(|(id, test)| FoldSpec {
            id,
            train: ids.iter().filter(|t| !test.contains(t)).cloned().collect(),
            test,
        })
        .collect())
}

/// Splits training trials into (train, validation); the validation share
/// is `fraction` rounded, at least one trial when two or more exist.
pub fn validation_split<R: Rng>(train: &[String], fraction: f64, rng: &mut R) -> (Vec<String>, Vec<String>) {
    if train.len() < 2 || fraction <= 0.0 {
        return (train.to_vec(), Vec::new());
    }
    let n_val = ((train.len() as f64 * fraction).round() as usize).clamp(1, train.len() - 1);
    let val: Vec<String> = train.choose_multiple(rng, n_val).cloned().collect();
    let rest = train.iter().filter(|t| !val.contains(t)).cloned().collect();
    (rest, val)
}
