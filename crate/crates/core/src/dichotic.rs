//! Behavioural trial selection, scalp regions and attended-ear groups.

use rand::Rng;

use crate::data::{Behavior, Ear, TrialRef};
use crate::error::{Error, Result};
use crate::model::Mat;
use crate::preproc::{Montage, Region};

pub const MIN_ATTENDED_SCORE: f64 = 0.6;
pub const MAX_UNATTENDED_SCORE: f64 = 0.4;

/// Both bounds are inclusive.
pub fn passes(b: &Behavior) -> bool {
    b.attended_score >= MIN_ATTENDED_SCORE && b.unattended_score <= MAX_UNATTENDED_SCORE
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Retention {
    pub kept: usize,
    pub total: usize,
}

impl Retention {
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.kept as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Selection {
    pub kept: Vec<TrialRef>,
    pub dropped: Vec<TrialRef>,
    pub left: Retention,
    pub right: Retention,
}

impl Selection {
    pub fn retention(&self, ear: Ear) -> Retention {
        match ear {
            Ear::Left => self.left,
            Ear::Right => self.right,
        }
    }
}

/// Keeps trials whose comprehension scores show the listener followed the
/// attended stream. Trials without scores are dropped.
pub fn select_trials(trials: &[TrialRef]) -> Selection {
    let mut out = Selection::default();
    for t in trials {
        let Some(b) = &t.behavior else {
            out.dropped.push(t.clone());
            continue;
        };
        let ok = passes(b);
        let r = match b.attended_ear {
            Ear::Left => &mut out.left,
            Ear::Right => &mut out.right,
        };
        r.total += 1;
        if ok {
            r.kept += 1;
            out.kept.push(t.clone());
        } else {
            out.dropped.push(t.clone());
        }
    }
    out
}

/// Channel indices of a region given by name.
pub fn region_channels(montage: &Montage, region: &str) -> Result<Vec<usize>> {
    let r: Region = region.parse()?;
    Ok(montage.channels_in(r))
}

/// Rows `channels` of `eeg`, in the given order.
pub fn subset_eeg(eeg: &Mat, channels: &[usize]) -> Result<Mat> {
    if channels.is_empty() {
        return Err(Error::InvalidInput("empty channel set".into()));
    }
    let rows = channels
        .iter()
        .map(|&c| {
            if c < eeg.rows {
                Ok(eeg.row(c).to_vec())
            } else {
                Err(Error::InvalidInput(format!("channel {c} of {}", eeg.rows)))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Mat::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarGroups<T> {
    pub left: Vec<T>,
    pub right: Vec<T>,
}

impl<T> EarGroups<T> {
    pub fn group(&self, ear: Ear) -> &[T] {
        match ear {
            Ear::Left => &self.left,
            Ear::Right => &self.right,
        }
    }
}

/// Groups items by attended ear and downsamples the larger group, keeping
/// the original order, so both hold `min(|S1|, |S2|)` items.
pub fn split_by_ear<T, R: Rng>(items: Vec<T>, ear_of: impl Fn(&T) -> Ear, rng: &mut R) -> Result<EarGroups<T>> {
    let (left, right): (Vec<T>, Vec<T>) = items.into_iter().partition(|t| ear_of(t) == Ear::Left);
    if left.is_empty() || right.is_empty() {
        return Err(Error::InvalidInput(format!(
            "attended-ear groups of size {} (left) and {} (right)",
            left.len(),
            right.len()
        )));
    }
    let n = left.len().min(right.len());
    let mut thin = |v: Vec<T>| -> Vec<T> {
        if v.len() == n {
            return v;
        }
        let mut keep = rand::seq::index::sample(rng, v.len(), n).into_vec();
        keep.sort_unstable();
        let mut keep = keep.into_iter().peekable();
        v.into_iter()
            .enumerate()
            .filter_map(|(i, x)| (keep.peek() == Some(&i)).then(|| { keep.next(); x }))
            .collect()
    };
    let left = thin(left);
    let right = thin(right);
    Ok(EarGroups { left, right })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Split, TrialStimulus};
    use crate::preproc::Layout;
    use crate::rng::rng_for;
    use std::path::PathBuf;

    fn trial(i: usize, ear: Ear, att: f64, un: f64) -> TrialRef {
        TrialRef {
            subject: "s".into(),
            trial: format!("t{i}"),
            split: Split::Train,
            eeg_path: PathBuf::new(),
            rate: 64.0,
            stimulus: TrialStimulus::Dichotic { left: vec![], right: vec![] },
            behavior: Some(Behavior {
                attended_ear: ear,
                attended_score: att,
                unattended_score: un,
            }),
        }
    }

    #[test]
    fn selection_bounds_are_inclusive() {
        let ts = vec![
            trial(0, Ear::Left, 0.7, 0.3),
            trial(1, Ear::Left, 0.6, 0.4),
            trial(2, Ear::Right, 0.5, 0.5),
            trial(3, Ear::Right, 0.9, 0.41),
        ];
        let s = select_trials(&ts);
        let kept: Vec<&str> = s.kept.iter().map(|t| t.trial.as_str()).collect();
        assert_eq!(kept, ["t0", "t1"]);
        assert_eq!(s.kept.len() + s.dropped.len(), ts.len());
        assert_eq!(s.left, Retention { kept: 2, total: 2 });
        assert_eq!(s.right, Retention { kept: 0, total: 2 });
        assert_eq!(s.retention(Ear::Left).percent(), 100.0);
    }

    #[test]
    fn regions_partition_both_caps() {
        for layout in [Layout::Biosemi64, Layout::Biosemi128] {
            let m = Montage::builtin(layout);
            let mut seen = vec![0usize; m.len()];
            for r in Region::ALL {
                let ch = region_channels(&m, r.name()).unwrap();
                assert!(!ch.is_empty());
                assert_eq!(ch, region_channels(&m, r.name()).unwrap());
                for c in ch {
                    seen[c] += 1;
                }
            }
            assert!(seen.iter().all(|&k| k == 1));
            let f = region_channels(&m, "frontal").unwrap();
            let o = region_channels(&m, "occipital").unwrap();
            assert!(f.iter().all(|c| !o.contains(c)));
        }
        assert!(region_channels(&Montage::builtin(Layout::Biosemi64), "limbic").is_err());
    }

    #[test]
    fn subsets_are_row_slices() {
        let eeg = Mat::from_vec(4, 3, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(subset_eeg(&eeg, &[0, 1, 2, 3]).unwrap(), eeg);
        let a = subset_eeg(&eeg, &[2, 0]).unwrap();
        assert_eq!(a.row(0), eeg.row(2));
        assert_eq!(a.row(1), eeg.row(0));
        assert!(subset_eeg(&eeg, &[]).is_err());
        assert!(subset_eeg(&eeg, &[4]).is_err());
        let m = Montage::builtin(Layout::Biosemi128);
        let temporal = region_channels(&m, "temporal").unwrap();
        let big = Mat::zeros(128, 10);
        assert_eq!(subset_eeg(&big, &temporal).unwrap().rows, temporal.len());
    }

    #[test]
    fn ear_groups_are_balanced_and_seeded() {
        let items: Vec<(usize, Ear)> = (0..180).map(|i| (i, if i < 100 { Ear::Left } else { Ear::Right })).collect();
        let g = split_by_ear(items.clone(), |x| x.1, &mut rng_for(1, &[])).unwrap();
        assert_eq!((g.left.len(), g.right.len()), (80, 80));
        assert!(g.left.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(g.group(Ear::Right).iter().all(|x| x.1 == Ear::Right));
        let h = split_by_ear(items, |x| x.1, &mut rng_for(1, &[])).unwrap();
        assert_eq!(g, h);
        let only_left: Vec<(usize, Ear)> = (0..5).map(|i| (i, Ear::Left)).collect();
        assert!(split_by_ear(only_left, |x| x.1, &mut rng_for(1, &[])).is_err());
    }
}
