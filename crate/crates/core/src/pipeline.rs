//! Dataset-level preprocessing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{read_records, save_manifest, DType, Record, TensorBlob};
use crate::error::{Error, Result};
use crate::preproc::{preprocess, Montage, PreprocConfig, StageRecord};
use crate::sigproc::TimeSeries;
use crate::trainer::par_map;

/// What preprocessing did to one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPreproc {
    pub subject: String,
    pub trial: String,
    pub input_rate: f64,
    pub output_rate: f64,
    pub rejected: Vec<usize>,
    pub rejected_labels: Vec<String>,
    pub flat_channels: Vec<usize>,
    pub stages: Vec<StageRecord>,
}

fn copy_into(src_root: &Path, dst_root: &Path, rel: &str) -> Result<()> {
    let dst = dst_root.join(rel);
    if let Some(parent) = dst.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::copy(src_root.join(rel), dst)?;
    Ok(())
}

/// Runs the preprocessing chain on every EEG file of a manifest and writes
/// a new corpus below `out`: the 64 Hz EEG, copies of every other
/// referenced file, a manifest pointing at them, and one report line per
/// recording in `preprocess_report.jsonl`. Returns the new manifest path.
pub fn preprocess_dataset(
    manifest: impl AsRef<Path>,
    out: impl AsRef<Path>,
    config: &PreprocConfig,
    jobs: usize,
) -> Result<(PathBuf, Vec<TrialPreproc>)> {
    let manifest = manifest.as_ref();
    let out = out.as_ref();
    let root = manifest.parent().unwrap_or(Path::new("."));
    let records = read_records(manifest)?;
    std::fs::create_dir_all(out)?;

    let montage_path = records.iter().find_map(|(_, r)| match r {
        Record::Montage { path } => Some(root.join(path)),
        _ => None,
    });
    let montage = montage_path.as_ref().map(Montage::load).transpose()?;

    let eeg: Vec<&Record> = records.iter().map(|(_, r)| r).filter(|r| matches!(r, Record::Eeg { .. })).collect();
    let reports = par_map(jobs, &eeg, |_, rec| {
        let Record::Eeg { subject, trial, path, rate, .. } = rec else {
            unreachable!()
        };
        let context = |e: Error| Error::InvalidInput(format!("{subject}/{trial}: {e}"));
        let m = TensorBlob::load(root.join(path))?.to_mat()?;
        let montage = match &montage {
            Some(m) => m.clone(),
            None => Montage::for_channels(m.rows)?,
        };
        let ts = TimeSeries::new(m.data, m.rows, *rate, montage.labels()).map_err(context)?;
        let (clean, report) = preprocess(&ts, &montage, config).map_err(context)?;
        let dst = out.join(path);
        if let Some(parent) = dst.parent() {
            std::fs::create_dir_all(parent)?;
        }
        TensorBlob::new(DType::F32, vec![clean.channels(), clean.frames()], clean.data().to_vec())?.save(dst)?;
        Ok(TrialPreproc {
            subject: subject.clone(),
            trial: trial.clone(),
            input_rate: *rate,
            output_rate: clean.rate(),
            rejected_labels: report.rejected.iter().map(|&c| montage.labels()[c].clone()).collect(),
            rejected: report.rejected,
            flat_channels: report.flat_channels,
            stages: report.stages,
        })
    })?;

    let mut written = Vec::with_capacity(records.len());
    for (_, rec) in records {
        match rec {
            Record::Eeg {
                subject,
                trial,
                split,
                path,
                sentences,
                left,
                right,
                ..
            } => written.push(Record::Eeg {
                subject,
                trial,
                split,
                path,
                rate: config.target_rate,
                sentences,
                left,
                right,
            }),
            other => {
                if let Some(f) = other.file() {
                    copy_into(root, out, f)?;
                }
                written.push(other);
            }
        }
    }
    let new_manifest = out.join("manifest.jsonl");
    save_manifest(&new_manifest, &written)?;
    let mut text = String::new();
    for r in &reports {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(out.join("preprocess_report.jsonl"), text)?;
    Ok((new_manifest, reports))
}
