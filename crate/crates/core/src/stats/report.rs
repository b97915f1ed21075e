//! Tab-separated report files.
//!
//! | file                          | one row per                      |
//! |-------------------------------|----------------------------------|
//! | `accuracy_by_lambda.tsv`      | evaluated λ                      |
//! | `scatter_lambda_{0,0.5,1}.tsv`| test pair at that λ              |
//! | `region_accuracy.tsv`         | scalp region                     |
//! | `ear_accuracy.tsv`            | attended-ear group               |
//! | `boundary_ablation.tsv`       | word-boundary mode               |
//!
//! Comparisons against a reference condition are flagged significant when
//! `p < ALPHA`. Paired conditions (same test pairs) use the signed-rank test
//! on per-pair margins `sim_pos − sim_neg`; the ear groups and the boundary
//! modes, whose samples are not paired, use the rank-sum test.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{fold_accuracies, mm_accuracy, wilcoxon_rank_sum, wilcoxon_signed_rank, PredictionRecord, TestResult};
use crate::data::Ear;
use crate::error::Result;
use crate::preproc::Region;
use crate::stimulus::BoundaryMode;

pub const ALPHA: f64 = 0.01;

const SCATTER_LAMBDAS: [f64; 3] = [0.0, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct RegionResult {
    pub region: Region,
    pub channels: usize,
    pub records: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarResult {
    pub ear: Ear,
    pub kept: usize,
    pub total: usize,
    pub train_pairs: usize,
    pub records: Vec<PredictionRecord>,
}

/// Everything an evaluation produced. Empty sections write no file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalResults {
    pub lambdas: Vec<(f64, Vec<PredictionRecord>)>,
    pub regions: Vec<RegionResult>,
    pub ears: Vec<EarResult>,
    pub boundaries: Vec<(BoundaryMode, Vec<PredictionRecord>)>,
}

struct Summary {
    accuracy: f64,
    fold_mean: f64,
    fold_sd: f64,
    pairs: usize,
}

fn summarize(records: &[PredictionRecord]) -> Result<Summary> {
    let accuracy = mm_accuracy(records)?;
    let folds: Vec<f64> = fold_accuracies(records)?.into_iter().map(|f| f.1).collect();
    let n = folds.len() as f64;
    let fold_mean = folds.iter().sum::<f64>() / n;
    let fold_sd = if folds.len() > 1 {
        (folds.iter().map(|a| (a - fold_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        accuracy,
        fold_mean,
        fold_sd,
        pairs: records.len(),
    })
}

fn margins_by_pair(records: &[PredictionRecord]) -> BTreeMap<(usize, &str), f64> {
    records.iter().map(|r| ((r.fold, r.pair_id.as_str()), r.margin())).collect()
}

/// Signed-rank test on margins of the pairs both conditions scored.
fn paired_test(a: &[PredictionRecord], b: &[PredictionRecord]) -> Option<TestResult> {
    let mb = margins_by_pair(b);
    let (x, y): (Vec<f64>, Vec<f64>) = margins_by_pair(a)
        .into_iter()
        .filter_map(|(k, m)| mb.get(&k).map(|&n| (m, n)))
        .unzip();
    wilcoxon_signed_rank(&x, &y).ok()
}

fn test_columns(t: Option<TestResult>) -> String {
    match t {
        Some(t) => format!("{:.4}\t{:.6e}\t{}", t.statistic, t.p, t.significant()),
        None => "NA\tNA\tNA".into(),
    }
}

fn summary_columns(s: &Summary) -> String {
    format!("{:.4}\t{:.4}\t{:.4}\t{}", s.accuracy, s.fold_mean, s.fold_sd, s.pairs)
}

fn lambda_label(l: f64) -> String {
    format!("{l}")
}

fn write(dir: &Path, name: &str, body: String, out: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body)?;
    out.push(path);
    Ok(())
}

/// Writes the report files into `dir` and returns their paths.
pub fn emit_reports(results: &EvalResults, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();

    let reference = results
        .lambdas
        .iter()
        .find(|(l, _)| *l == 1.0)
        .or_else(|| results.lambdas.first());
    if let Some((ref_lambda, ref_records)) = reference {
        let mut body = String::from("lambda\taccuracy\tfold_mean\tfold_sd\tpairs\tW_vs_lambda1\tp_vs_lambda1\tsignificant\n");
        if *ref_lambda != 1.0 {
            body = body.replace("lambda1", &format!("lambda{}", lambda_label(*ref_lambda)));
        }
        for (l, records) in &results.lambdas {
            let s = summarize(records)?;
            let t = if l == ref_lambda { None } else { paired_test(records, ref_records) };
            let _ = writeln!(body, "{}\t{}\t{}", lambda_label(*l), summary_columns(&s), test_columns(t));
        }
        write(dir, "accuracy_by_lambda.tsv", body, &mut out)?;
    }

    for target in SCATTER_LAMBDAS {
        if let Some((_, records)) = results.lambdas.iter().find(|(l, _)| *l == target) {
            let mut body = String::from("pair_id\tfold\tsim_pos\tsim_neg\tcorrect\n");
            for r in records {
                let _ = writeln!(
                    body,
                    "{}\t{}\t{:.6}\t{:.6}\t{}",
                    r.pair_id,
                    r.fold,
                    r.sim_pos,
                    r.sim_neg,
                    u8::from(r.correct())
                );
            }
            write(dir, &format!("scatter_lambda_{}.tsv", lambda_label(target)), body, &mut out)?;
        }
    }

    if !results.regions.is_empty() {
        let mut body = String::from(
            "region\tchannels\tlambda\taccuracy\tfold_mean\tfold_sd\tpairs\tW_vs_all\tp_vs_all\tsignificant\n",
        );
        for r in &results.regions {
            let lambda = r.records.first().map(|x| x.lambda);
            let full = lambda.and_then(|l| results.lambdas.iter().find(|(m, _)| *m == l));
            let t = full.and_then(|(_, f)| paired_test(&r.records, f));
            let _ = writeln!(
                body,
                "{}\t{}\t{}\t{}\t{}",
                r.region,
                r.channels,
                lambda.map_or("NA".into(), lambda_label),
                summary_columns(&summarize(&r.records)?),
                test_columns(t)
            );
        }
        write(dir, "region_accuracy.tsv", body, &mut out)?;
    }

    if !results.ears.is_empty() {
        let t = match &results.ears[..] {
            [a, b] => {
                let ma: Vec<f64> = a.records.iter().map(PredictionRecord::margin).collect();
                let mb: Vec<f64> = b.records.iter().map(PredictionRecord::margin).collect();
                wilcoxon_rank_sum(&ma, &mb).ok()
            }
            _ => None,
        };
        let mut body = String::from(
            "group\tattended_ear\tkept_trials\ttotal_trials\tretention\ttrain_pairs\taccuracy\tfold_mean\tfold_sd\tpairs\tU_between_groups\tp_between_groups\tsignificant\n",
        );
        for e in &results.ears {
            let group = match e.ear {
                Ear::Left => "S1",
                Ear::Right => "S2",
            };
            let retention = if e.total == 0 { 0.0 } else { 100.0 * e.kept as f64 / e.total as f64 };
            let _ = writeln!(
                body,
                "{group}\t{}\t{}\t{}\t{retention:.2}\t{}\t{}\t{}",
                e.ear,
                e.kept,
                e.total,
                e.train_pairs,
                summary_columns(&summarize(&e.records)?),
                test_columns(t)
            );
        }
        write(dir, "ear_accuracy.tsv", body, &mut out)?;
    }

    if !results.boundaries.is_empty() {
        let truth = results.boundaries.iter().find(|(m, _)| *m == BoundaryMode::True);
        let truth_folds: Option<Vec<f64>> = truth
            .map(|(_, r)| fold_accuracies(r).map(|f| f.into_iter().map(|x| x.1).collect()))
            .transpose()?;
        let mut body = String::from("boundaries\taccuracy\tfold_mean\tfold_sd\tpairs\tU_vs_true\tp_vs_true\tsignificant\n");
        for (mode, records) in &results.boundaries {
            let t = match (&truth_folds, *mode == BoundaryMode::True) {
                (Some(tf), false) => {
                    let f: Vec<f64> = fold_accuracies(records)?.into_iter().map(|x| x.1).collect();
                    wilcoxon_rank_sum(tf, &f).ok()
                }
                _ => None,
            };
            let _ = writeln!(body, "{mode}\t{}\t{}", summary_columns(&summarize(records)?), test_columns(t));
        }
        write(dir, "boundary_ablation.tsv", body, &mut out)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;

    fn records(lambda: f64, n: usize, skill: f64, seed: u64) -> Vec<PredictionRecord> {
        let mut rng = rng_for(seed, &[]);
        (0..n)
            .map(|i| {
                let neg: f64 = rng.gen_range(0.0..1.0);
                PredictionRecord {
                    pair_id: format!("p{i:03}"),
                    fold: i % 6,
                    lambda,
                    sim_pos: (neg + skill * rng.gen_range(-0.3..1.0)).clamp(0.0, 1.0),
                    sim_neg: neg,
                }
            })
            .collect()
    }

    fn sample() -> EvalResults {
        let lambdas = [0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0];
        EvalResults {
            lambdas: lambdas.iter().enumerate().map(|(i, &l)| (l, records(l, 60, 0.2 + 0.1 * i as f64, i as u64))).collect(),
            regions: Region::ALL
                .iter()
                .enumerate()
                .map(|(i, &region)| RegionResult {
                    region,
                    channels: 4,
                    records: records(0.5, 60, 0.3, 10 + i as u64),
                })
                .collect(),
            ears: vec![
                EarResult { ear: Ear::Left, kept: 30, total: 40, train_pairs: 50, records: records(0.5, 30, 0.4, 20) },
                EarResult { ear: Ear::Right, kept: 28, total: 40, train_pairs: 50, records: records(0.5, 30, 0.6, 21) },
            ],
            boundaries: vec![
                (BoundaryMode::True, records(0.5, 60, 0.8, 30)),
                (BoundaryMode::None, records(0.5, 60, 0.2, 31)),
                (BoundaryMode::Random(4), records(0.5, 60, 0.3, 32)),
            ],
        }
    }

    fn rows(path: &Path) -> Vec<String> {
        std::fs::read_to_string(path).unwrap().lines().map(String::from).collect()
    }

    #[test]
    fn report_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_reports(&sample(), dir.path()).unwrap();
        assert_eq!(files.len(), 1 + 3 + 3);
        assert_eq!(rows(&dir.path().join("accuracy_by_lambda.tsv")).len(), 1 + 7);
        for l in ["0", "0.5", "1"] {
            assert_eq!(rows(&dir.path().join(format!("scatter_lambda_{l}.tsv"))).len(), 1 + 60);
        }
        assert_eq!(rows(&dir.path().join("region_accuracy.tsv")).len(), 1 + 5);
        let ears = rows(&dir.path().join("ear_accuracy.tsv"));
        assert!(ears[1].starts_with("S1\tleft\t30\t40\t75.00"));
        let b = rows(&dir.path().join("boundary_ablation.tsv"));
        assert_eq!(b.len(), 4);
        assert!(b[3].starts_with("random:4\t"));
        assert!(b[1].ends_with("NA\tNA\tNA"));
        let header_cols = rows(&dir.path().join("accuracy_by_lambda.tsv"))[0].split('\t').count();
        assert!(rows(&dir.path().join("accuracy_by_lambda.tsv")).iter().all(|r| r.split('\t').count() == header_cols));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = emit_reports(&sample(), a.path()).unwrap();
        let fb = emit_reports(&sample(), b.path()).unwrap();
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }

    #[test]
    fn empty_results_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_reports(&EvalResults::default(), dir.path()).unwrap().is_empty());
    }
}
