//! Line-delimited JSON manifests.
//!
//! One record per line, tagged by `kind`. Paths are relative to the
//! manifest's directory.
//!
//! ```text
//! {"kind":"montage","path":"montage.csv"}
//! {"kind":"embeddings","path":"vocab.emb"}
//! {"kind":"audio","id":"t00-left","path":"audio/t00-left.nmtb","rate":16000.0}
//! {"kind":"sentence","id":"t00-left-s0","audio":"t00-left","onset_s":0.0,"duration_s":4.0,
//!  "tokens":[{"text":"w012","start_s":0.05,"end_s":0.31}]}
//! {"kind":"eeg","subject":"s00","trial":"t00","split":"train","path":"eeg/s00-t00.nmtb","rate":512.0,
//!  "left":["t00-left-s0"],"right":["t00-right-s0"]}
//! {"kind":"behavior","subject":"s00","trial":"t00","attended_ear":"left",
//!  "attended_score":0.8,"unattended_score":0.2}
//! ```
//!
//! An EEG record lists `sentences` for natural listening, or `left` and
//! `right` for dichotic listening. Sentence token times are relative to the
//! sentence onset; EEG and audio share time zero.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stimulus::WordToken;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ear {
    Left,
    Right,
}

impl Ear {
    pub fn other(self) -> Ear {
        match self {
            Ear::Left => Ear::Right,
            Ear::Right => Ear::Left,
        }
    }
}

impl fmt::Display for Ear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ear::Left => "left",
            Ear::Right => "right",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Natural,
    Dichotic,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Natural => "natural",
            Protocol::Dichotic => "dichotic",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(Protocol::Natural),
            "dichotic" => Ok(Protocol::Dichotic),
            _ => Err(Error::Config(format!("unknown protocol {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Montage {
        path: String,
    },
    Embeddings {
        path: String,
    },
    Audio {
        id: String,
        path: String,
        rate: f64,
    },
    Sentence {
        id: String,
        audio: String,
        onset_s: f64,
        duration_s: f64,
        tokens: Vec<WordToken>,
    },
    Eeg {
        subject: String,
        trial: String,
        split: Split,
        path: String,
        rate: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        sentences: Vec<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        left: Vec<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        right: Vec<String>,
    },
    Behavior {
        subject: String,
        trial: String,
        attended_ear: Ear,
        attended_score: f64,
        unattended_score: f64,
    },
}

impl Record {
    /// The file this record points at, relative to the manifest.
    pub fn file(&self) -> Option<&str> {
        match self {
            Record::Montage { path } | Record::Embeddings { path } => Some(path),
            Record::Audio { path, .. } | Record::Eeg { path, .. } => Some(path),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioRef {
    pub path: PathBuf,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRef {
    pub id: String,
    pub audio: String,
    pub onset_s: f64,
    pub duration_s: f64,
    pub tokens: Vec<WordToken>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Behavior {
    pub attended_ear: Ear,
    pub attended_score: f64,
    pub unattended_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialStimulus {
    Natural(Vec<String>),
    Dichotic { left: Vec<String>, right: Vec<String> },
}

impl TrialStimulus {
    pub fn protocol(&self) -> Protocol {
        match self {
            TrialStimulus::Natural(_) => Protocol::Natural,
            TrialStimulus::Dichotic { .. } => Protocol::Dichotic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRef {
    pub subject: String,
    pub trial: String,
    pub split: Split,
    pub eeg_path: PathBuf,
    pub rate: f64,
    pub stimulus: TrialStimulus,
    pub behavior: Option<Behavior>,
}

/// A loaded manifest. Everything is keyed in sorted maps, so the line order
/// of the manifest does not matter. Signal files are read on demand.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub montage: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub audio: BTreeMap<String, AudioRef>,
    pub sentences: BTreeMap<String, SentenceRef>,
    /// Keyed by `(subject, trial)`.
    pub trials: BTreeMap<(String, String), TrialRef>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.trials.keys().map(|(s, _)| s.clone()).collect();
        s.dedup();
        s
    }

    /// Distinct trial ids, sorted.
    pub fn trial_ids(&self) -> Vec<String> {
        let mut t: Vec<String> = self.trials.keys().map(|(_, t)| t.clone()).collect();
        t.sort();
        t.dedup();
        t
    }

    /// The protocol shared by every trial, or an error when they differ.
    pub fn protocol(&self) -> Result<Protocol> {
        let mut kinds = self.trials.values().map(|t| t.stimulus.protocol());
        let first = kinds
            .next()
            .ok_or_else(|| Error::InvalidInput("dataset has no trials".into()))?;
        if kinds.any(|k| k != first) {
            return Err(Error::InvalidInput("dataset mixes natural and dichotic trials".into()));
        }
        Ok(first)
    }
}

fn bad(line: usize, reason: impl Into<String>) -> Error {
    Error::Manifest {
        line,
        reason: reason.into(),
    }
}

/// Parses manifest text without touching the file system; `root` anchors
/// the relative paths.
pub fn parse_manifest<R: BufRead>(reader: R, root: &Path) -> Result<Dataset> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
        records.push((i + 1, rec));
    }
    build(records, root)
}

fn check_rate(line: usize, rate: f64) -> Result<()> {
    if rate.is_finite() && rate > 0.0 {
        Ok(())
    } else {
        Err(bad(line, format!("rate {rate} must be positive")))
    }
}

fn build(records: Vec<(usize, Record)>, root: &Path) -> Result<Dataset> {
    let mut ds = Dataset::default();
    let mut trial_lines = BTreeMap::new();
    let mut behaviors = Vec::new();
    for (line, rec) in records {
        match rec {
            Record::Montage { path } => {
                if ds.montage.replace(root.join(path)).is_some() {
                    return Err(bad(line, "second montage record"));
                }
            }
            Record::Embeddings { path } => {
                if ds.embeddings.replace(root.join(path)).is_some() {
                    return Err(bad(line, "second embeddings record"));
                }
            }
            Record::Audio { id, path, rate } => {
                check_rate(line, rate)?;
                let r = AudioRef {
                    path: root.join(path),
                    rate,
                };
                if ds.audio.insert(id.clone(), r).is_some() {
                    return Err(bad(line, format!("duplicate audio id {id:?}")));
                }
            }
            Record::Sentence {
                id,
                audio,
                onset_s,
                duration_s,
                tokens,
            } => {
                if !(onset_s >= 0.0 && duration_s > 0.0) {
                    return Err(bad(line, "sentence needs onset ≥ 0 and positive duration"));
                }
                crate::stimulus::validate_tokens(&tokens).map_err(|e| bad(line, e.to_string()))?;
                if tokens.last().is_some_and(|t| t.end_s > duration_s + 1e-9) {
                    return Err(bad(line, "token ends after the sentence"));
                }
                let s = SentenceRef {
                    id: id.clone(),
                    audio,
                    onset_s,
                    duration_s,
                    tokens,
                };
                if ds.sentences.insert(id.clone(), s).is_some() {
                    return Err(bad(line, format!("duplicate sentence id {id:?}")));
                }
            }
            Record::Eeg {
                subject,
                trial,
                split,
                path,
                rate,
                sentences,
                left,
                right,
            } => {
                check_rate(line, rate)?;
                let stimulus = match (sentences.is_empty(), left.is_empty() && right.is_empty()) {
                    (false, true) => TrialStimulus::Natural(sentences),
                    (true, false) => TrialStimulus::Dichotic { left, right },
                    _ => return Err(bad(line, "eeg record needs either sentences or left/right streams")),
                };
                let key = (subject.clone(), trial.clone());
                let t = TrialRef {
                    subject,
                    trial,
                    split,
                    eeg_path: root.join(path),
                    rate,
                    stimulus,
                    behavior: None,
                };
                if ds.trials.insert(key.clone(), t).is_some() {
                    return Err(bad(line, format!("duplicate trial id {:?} for subject {:?}", key.1, key.0)));
                }
                trial_lines.insert(key, line);
            }
            Record::Behavior {
                subject,
                trial,
                attended_ear,
                attended_score,
                unattended_score,
            } => {
                for s in [attended_score, unattended_score] {
                    if !(0.0..=1.0).contains(&s) {
                        return Err(bad(line, format!("score {s} outside [0, 1]")));
                    }
                }
                behaviors.push((
                    line,
                    (subject, trial),
                    Behavior {
                        attended_ear,
                        attended_score,
                        unattended_score,
                    },
                ));
            }
        }
    }

    for (line, key, b) in behaviors {
        let t = ds
            .trials
            .get_mut(&key)
            .ok_or_else(|| bad(line, format!("behavior for unknown trial {:?}/{:?}", key.0, key.1)))?;
        if t.behavior.replace(b).is_some() {
            return Err(bad(line, format!("duplicate behavior for trial {:?}/{:?}", key.0, key.1)));
        }
    }
    for s in ds.sentences.values() {
        if !ds.audio.contains_key(&s.audio) {
            return Err(Error::InvalidInput(format!(
                "sentence {:?} refers to unknown audio {:?}",
                s.id, s.audio
            )));
        }
    }
    for (key, t) in &ds.trials {
        let line = trial_lines[key];
        let ids: Vec<&String> = match &t.stimulus {
            TrialStimulus::Natural(s) => s.iter().collect(),
            TrialStimulus::Dichotic { left, right } => left.iter().chain(right).collect(),
        };
        if let Some(id) = ids.iter().find(|id| !ds.sentences.contains_key(id.as_str())) {
            return Err(bad(line, format!("unknown sentence {id:?}")));
        }
    }
    Ok(ds)
}

/// Records of a manifest file with their line numbers, after checking that
/// every referenced file exists.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<(usize, Record)>> {
    let path = path.as_ref();
    let root = path.parent().unwrap_or(Path::new("."));
    let file = std::fs::File::open(path)?;
    let text = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
        if let Some(f) = rec.file() {
            if !root.join(f).is_file() {
                return Err(bad(i + 1, format!("missing file {f:?}")));
            }
        }
        records.push((i + 1, rec));
    }
    Ok(records)
}

/// Reads a manifest and checks that every referenced file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let root = path.parent().unwrap_or(Path::new("."));
    build(read_records(path)?, root)
}

pub fn write_manifest<W: Write>(mut w: W, records: &[Record]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_manifest(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_manifest(std::io::BufWriter::new(file), records)
}
