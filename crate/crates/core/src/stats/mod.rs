//! Match-mismatch accuracy and Wilcoxon tests.

mod report;

pub use report::{emit_reports, EarResult, EvalResults, RegionResult, ALPHA};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest sample for which p values are computed exactly.
pub const EXACT_LIMIT: usize = 12;

/// One scored pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub pair_id: String,
    pub fold: usize,
    pub lambda: f64,
    pub sim_pos: f64,
    pub sim_neg: f64,
}

impl PredictionRecord {
    /// Ties count as errors.
    pub fn correct(&self) -> bool {
        self.sim_pos > self.sim_neg
    }

    pub fn margin(&self) -> f64 {
        self.sim_pos - self.sim_neg
    }
}

/// Percentage of records with `sim_pos > sim_neg`.
pub fn mm_accuracy(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidInput("accuracy of an empty record set".into()));
    }
    let hits = records.iter().filter(|r| r.correct()).count();
    Ok(100.0 * hits as f64 / records.len() as f64)
}

/// Accuracy of each fold, in fold order.
pub fn fold_accuracies(records: &[PredictionRecord]) -> Result<Vec<(usize, f64)>> {
    let mut folds: Vec<usize> = records.iter().map(|r| r.fold).collect();
    folds.sort_unstable();
    folds.dedup();
    folds
        .into_iter()
        .map(|f| {
            let sub: Vec<PredictionRecord> = records.iter().filter(|r| r.fold == f).cloned().collect();
            Ok((f, mm_accuracy(&sub)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p: f64,
    pub exact: bool,
}

impl TestResult {
    pub fn significant(&self) -> bool {
        self.p < ALPHA
    }
}

/// Midranks (1-based) of `values`, plus the sizes of tied groups.
pub fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

fn normal_two_sided(stat: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((stat - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Two-sided p from a null distribution given as `(value, count)` pairs.
fn exact_two_sided(dist: &[(i64, f64)], observed: i64) -> f64 {
    let total: f64 = dist.iter().map(|d| d.1).sum();
    let lo: f64 = dist.iter().filter(|d| d.0 <= observed).map(|d| d.1).sum();
    let hi: f64 = dist.iter().filter(|d| d.0 >= observed).map(|d| d.1).sum();
    (2.0 * lo.min(hi) / total).min(1.0)
}

/// Paired signed-rank test on `a − b`. The statistic is W⁺, the rank sum of
/// the positive differences; zero differences are dropped.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite difference".into()));
    }
    if d.is_empty() && !a.is_empty() {
        return Err(Error::UndefinedTest("all paired differences are zero".into()));
    }
    let n = d.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("{n} nonzero differences, at least 3 required")));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let w: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    if n <= EXACT_LIMIT {
        // doubled ranks are integers, so sums can be tabulated exactly
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; max + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=max).rev() {
                counts[s] += counts[s - r];
            }
        }
        let dist: Vec<(i64, f64)> = counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0.0)
            .map(|(s, &c)| (s as i64, c))
            .collect();
        let p = exact_two_sided(&dist, (2.0 * w).round() as i64);
        return Ok(TestResult { statistic: w, p, exact: true });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie / 48.0;
    Ok(TestResult {
        statistic: w,
        p: normal_two_sided(w, mean, var),
        exact: false,
    })
}

/// Rank-sum test of two independent samples. The statistic is
/// `U = R_a − n_a(n_a + 1)/2` from midranks of the pooled sample.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("rank-sum test needs two nonempty groups".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite observation".into()));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let (ranks, ties) = average_ranks(&pooled);
    let ra: f64 = ranks[..na].iter().sum();
    let u = ra - (na * (na + 1)) as f64 / 2.0;
    if n <= EXACT_LIMIT {
        // counts[k][s]: subsets of size k with doubled rank sum s
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![vec![0.0f64; max + 1]; na + 1];
        counts[0][0] = 1.0;
        for &r in &doubled {
            for k in (1..=na).rev() {
                for s in (r..=max).rev() {
                    counts[k][s] += counts[k - 1][s - r];
                }
            }
        }
        let dist: Vec<(i64, f64)> = counts[na]
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0.0)
            .map(|(s, &c)| (s as i64, c))
            .collect();
        let p = exact_two_sided(&dist, (2.0 * ra).round() as i64);
        return Ok(TestResult { statistic: u, p, exact: true });
    }
    let (naf, nbf, nf) = (na as f64, nb as f64, n as f64);
    let tie: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = naf * nbf / 12.0 * ((nf + 1.0) - tie / (nf * (nf - 1.0)));
    Ok(TestResult {
        statistic: u,
        p: normal_two_sided(u, naf * nbf / 2.0, var),
        exact: false,
    })
}
