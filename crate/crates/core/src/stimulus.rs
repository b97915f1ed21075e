//! Acoustic and semantic stimulus features aligned to word boundaries.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sigproc::{hilbert_envelope, resample_slice};

/// Rate of the EEG and envelope after preprocessing.
pub const FEATURE_RATE: f64 = 64.0;
/// Rate of the convolutional feature grid (stride 3 on 64 Hz).
pub const FRAME_RATE: f64 = 64.0 / 3.0;
pub const EMBEDDING_DIM: usize = 300;
pub const AUDIO_RATES: [f64; 2] = [16_000.0, 48_000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordToken {
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
}

impl WordToken {
    pub fn new(text: impl Into<String>, start_s: f64, end_s: f64) -> Self {
        Self {
            text: text.into(),
            start_s,
            end_s,
        }
    }
}

/// Checks `0 ≤ start < end` per token and that tokens are ordered and
/// non-overlapping.
pub fn validate_tokens(tokens: &[WordToken]) -> Result<()> {
    let mut prev_end = 0.0;
    for (index, t) in tokens.iter().enumerate() {
        if !(t.start_s.is_finite() && t.end_s.is_finite() && t.start_s >= 0.0 && t.start_s < t.end_s) {
            return Err(Error::Alignment {
                index,
                reason: format!("bad interval [{}, {})", t.start_s, t.end_s),
            });
        }
        if t.start_s < prev_end - 1e-9 {
            return Err(Error::Alignment {
                index,
                reason: format!("starts at {} before previous end {prev_end}", t.start_s),
            });
        }
        prev_end = t.end_s;
    }
    Ok(())
}

/// One sentence: its 64 Hz envelope, its words and their embedding rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceStimulus {
    pub id: String,
    pub envelope: Vec<f64>,
    pub tokens: Vec<WordToken>,
    pub embeddings: Vec<Vec<f64>>,
}

impl SentenceStimulus {
    pub fn new(
        id: impl Into<String>,
        envelope: Vec<f64>,
        tokens: Vec<WordToken>,
        embeddings: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let s = Self {
            id: id.into(),
            envelope,
            tokens,
            embeddings,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn frames(&self) -> usize {
        self.envelope.len()
    }

    pub fn duration_s(&self) -> f64 {
        self.envelope.len() as f64 / FEATURE_RATE
    }

    pub fn validate(&self) -> Result<()> {
        if self.envelope.is_empty() {
            return Err(Error::InvalidInput(format!("sentence {} has an empty envelope", self.id)));
        }
        if self.embeddings.len() != self.tokens.len() {
            return Err(Error::Shape(format!(
                "sentence {}: {} embedding rows for {} tokens",
                self.id,
                self.embeddings.len(),
                self.tokens.len()
            )));
        }
        validate_tokens(&self.tokens)?;
        let limit = self.duration_s() + 1e-9;
        if let Some(index) = self.tokens.iter().position(|t| t.end_s > limit) {
            return Err(Error::Alignment {
                index,
                reason: format!("token ends after the sentence ({limit} s)"),
            });
        }
        Ok(())
    }

    /// The stimulus cut or zero-padded to `frames` samples. Words are
    /// dropped when they start past the new end and clipped when they
    /// straddle it.
    pub fn fit_to(&self, frames: usize) -> SentenceStimulus {
        let mut envelope = self.envelope.clone();
        envelope.resize(frames, 0.0);
        let end_s = frames as f64 / FEATURE_RATE;
        let mut tokens = Vec::new();
        let mut embeddings = Vec::new();
        for (t, e) in self.tokens.iter().zip(&self.embeddings) {
            // keep only words that still own at least one conv frame
            let first = (t.start_s * FRAME_RATE + 1e-9).floor() as usize;
            if t.start_s >= end_s || first + 1 > conv_frames(frames) {
                continue;
            }
            tokens.push(WordToken::new(t.text.clone(), t.start_s, t.end_s.min(end_s)));
            embeddings.push(e.clone());
        }
        SentenceStimulus {
            id: self.id.clone(),
            envelope,
            tokens,
            embeddings,
        }
    }
}

/// Word vectors keyed by normalized token text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
}

/// Lowercases and trims leading/trailing punctuation.
pub fn normalize_word(text: &str) -> String {
    text.trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_lowercase()
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, word: &str, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for {word:?} has {} values, table dim is {}",
                vector.len(),
                self.dim
            )));
        }
        let key = normalize_word(word);
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::InvalidInput(format!("unusable table key {word:?}")));
        }
        self.vectors.insert(key, vector);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.vectors.get(&normalize_word(word)).map(Vec::as_slice)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    /// Binary layout: a text header `"count dim\n"`, then per word the
    /// UTF-8 token, one space, `dim` little-endian f32 values and `\n`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.vectors.len(), self.dim)?;
        for (word, v) in &self.vectors {
            w.write_all(word.as_bytes())?;
            w.write_all(b" ")?;
            for &x in v {
                w.write_f32::<LittleEndian>(x)?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut header = String::new();
        r.read_line(&mut header)?;
        let mut parts = header.split_whitespace().map(str::parse::<usize>);
        let (count, dim) = match (parts.next(), parts.next(), parts.next()) {
            (Some(Ok(c)), Some(Ok(d)), None) if d > 0 => (c, d),
            _ => return Err(Error::Format(format!("bad embedding header {header:?}"))),
        };
        let mut table = EmbeddingTable::new(dim);
        for i in 0..count {
            let mut word = Vec::new();
            r.read_until(b' ', &mut word)?;
            if word.pop() != Some(b' ') {
                return Err(Error::Format(format!("record {i}: truncated token")));
            }
            let word = String::from_utf8(word)
                .map_err(|_| Error::Format(format!("record {i}: token is not UTF-8")))?;
            let word = word.trim_start_matches('\n').to_string();
            let mut v = vec![0f32; dim];
            r.read_f32_into::<LittleEndian>(&mut v)
                .map_err(|_| Error::Format(format!("record {i}: truncated vector")))?;
            let mut nl = [0u8; 1];
            if r.read_exact(&mut nl).is_err() || nl[0] != b'\n' {
                return Err(Error::Format(format!("record {i}: missing record terminator")));
            }
            table.insert(&word, v).map_err(|e| Error::Format(format!("record {i}: {e}")))?;
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

/// Hilbert envelope of `audio`, resampled to 64 Hz and clamped at zero.
pub fn compute_envelope(audio: &[f64], audio_rate: f64) -> Result<Vec<f64>> {
    if audio.is_empty() {
        return Err(Error::InvalidInput("empty audio".into()));
    }
    if !AUDIO_RATES.contains(&audio_rate) {
        return Err(Error::Config(format!(
            "audio rate {audio_rate} Hz not in {AUDIO_RATES:?}"
        )));
    }
    let env = hilbert_envelope(audio, audio_rate)?;
    let mut out = resample_slice(&env, audio_rate, FEATURE_RATE)?;
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(out)
}

/// Embedding rows for `tokens`; out-of-vocabulary words get a zero row and
/// a `true` flag.
pub fn embed_words(tokens: &[WordToken], table: &EmbeddingTable) -> (Vec<Vec<f64>>, Vec<bool>) {
    tokens
        .iter()
        .map(|t| match table.get(&t.text) {
            Some(v) => (v.iter().map(|&x| f64::from(x)).collect(), false),
            None => (vec![0.0; table.dim()], true),
        })
        .unzip()
}

/// A half-open frame interval `[start, end)`.
pub type Window = (usize, usize);

/// Maps token times onto the frame grid at `frame_rate`.
///
/// Starts that fall inside the previous window are moved to its end, so the
/// windows are disjoint; every window is at least one frame wide.
pub fn boundaries_to_frames(
    tokens: &[WordToken],
    frame_rate: f64,
    n_frames: usize,
) -> Result<Vec<Window>> {
    validate_tokens(tokens)?;
    let mut out: Vec<Window> = Vec::with_capacity(tokens.len());
    let mut prev_end = 0;
    for (index, t) in tokens.iter().enumerate() {
        let mut start = (t.start_s * frame_rate + 1e-9).floor() as usize;
        start = start.max(prev_end);
        let end = ((t.end_s * frame_rate + 1e-9).floor() as usize).max(start + 1);
        if end > n_frames {
            return Err(Error::Alignment {
                index,
                reason: format!("window [{start}, {end}) exceeds {n_frames} frames"),
            });
        }
        out.push((start, end));
        prev_end = end;
    }
    Ok(out)
}

/// How the pooling windows are derived from a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BoundaryMode {
    /// Word windows from the transcript.
    True,
    /// One window spanning the whole sentence.
    None,
    /// `k` regions with uniformly drawn interior cut points.
    Random(usize),
}

impl std::fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryMode::True => write!(f, "true"),
            BoundaryMode::None => write!(f, "none"),
            BoundaryMode::Random(k) => write!(f, "random:{k}"),
        }
    }
}

impl TryFrom<String> for BoundaryMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BoundaryMode> for String {
    fn from(v: BoundaryMode) -> String {
        v.to_string()
    }
}

impl std::str::FromStr for BoundaryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" => Ok(BoundaryMode::True),
            "none" => Ok(BoundaryMode::None),
            _ => {
                let k = s
                    .strip_prefix("random:")
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| Error::Config(format!("bad word-boundary mode {s:?}")))?;
                Ok(BoundaryMode::Random(k))
            }
        }
    }
}

/// `k` contiguous windows covering `[0, n_frames)` with sorted, distinct,
/// uniformly drawn cut points. Fewer windows come back when `n_frames < k`.
pub fn random_windows<R: Rng>(n_frames: usize, k: usize, rng: &mut R) -> Vec<Window> {
    let k = k.clamp(1, n_frames.max(1));
    let cuts = rand::seq::index::sample(rng, n_frames - 1, k - 1);
    let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for c in cuts.into_iter().chain(std::iter::once(n_frames)) {
        out.push((start, c));
        start = c;
    }
    out
}

/// Number of frames on the stride-3 grid for a 64 Hz sequence of `t` samples.
pub fn conv_frames(t: usize) -> usize {
    t.div_ceil(3)
}

/// Pooling windows for `stim` under `mode` on the conv grid.
pub fn windows_for<R: Rng>(stim: &SentenceStimulus, mode: BoundaryMode, rng: &mut R) -> Result<Vec<Window>> {
    let n = conv_frames(stim.frames());
    match mode {
        BoundaryMode::True => boundaries_to_frames(&stim.tokens, FRAME_RATE, n),
        BoundaryMode::None => Ok(vec![(0, n)]),
        BoundaryMode::Random(k) => Ok(random_windows(n, k, rng)),
    }
}
