//! Synthetic corpora with a known stimulus-to-EEG mapping.
//!
//! Each word is a tone burst with its own carrier, level and slow amplitude
//! modulation, so the audio envelope and the word boundaries are known
//! exactly. Word vectors come from a fixed random codebook. EEG channel `c`
//! is
//!
//! ```text
//! acoustic_gain · mix[c] · env(t − τ) + semantic_gain · (P · v_word(t))[c] + pink noise
//! ```
//!
//! where `v_word(t)` is the vector of the word sounding at `t` (zero in
//! pauses). In dichotic mode both ears contribute, the attended one at full
//! gain and the other at `unattended_gain`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::manifest::{save_manifest, Ear, Protocol, Record, Split};
use super::tensor::TensorBlob;
use crate::error::{Error, Result};
use crate::model::Mat;
use crate::preproc::Montage;
use crate::rng::rng_for;
use crate::stimulus::{EmbeddingTable, WordToken, EMBEDDING_DIM};

/// Ramp length at each end of a tone burst.
const RAMP_S: f64 = 0.015;
/// Silence kept at both ends of every sentence.
const SENTENCE_MARGIN_S: f64 = 0.05;
/// Scale of the codebook entries.
const CODEBOOK_STD: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub protocol: Protocol,
    pub n_subjects: usize,
    pub n_trials: usize,
    pub trial_seconds: f64,
    /// Target sentence length; each stream is cut into equal sentences.
    pub sentence_seconds: f64,
    pub channels: usize,
    pub eeg_rate: f64,
    pub audio_rate: f64,
    pub delay_ms: f64,
    pub acoustic_gain: f64,
    pub semantic_gain: f64,
    /// Signal-to-noise ratio of the pink noise in dB; `None` disables it.
    pub snr_db: Option<f64>,
    pub vocab_size: usize,
    /// Every channel receives the envelope with weight 1.
    pub identity_mixing: bool,
    /// Gain of the ignored stream in dichotic mode.
    pub unattended_gain: f64,
    /// Dichotic trials in which the listener did not follow the
    /// instruction: both streams at equal gain, both scores 0.5.
    pub inattentive_fraction: f64,
    /// The last `test_subjects` subjects are marked as held-out.
    pub test_subjects: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Natural,
            n_subjects: 19,
            n_trials: 20,
            trial_seconds: 8.0,
            sentence_seconds: 4.0,
            channels: 16,
            eeg_rate: 512.0,
            audio_rate: 16_000.0,
            delay_ms: 100.0,
            acoustic_gain: 1.0,
            semantic_gain: 1.0,
            snr_db: Some(0.0),
            vocab_size: 200,
            identity_mixing: false,
            unattended_gain: 0.25,
            inattentive_fraction: 0.0,
            test_subjects: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("trial_seconds", self.trial_seconds),
            ("sentence_seconds", self.sentence_seconds),
            ("eeg_rate", self.eeg_rate),
            ("audio_rate", self.audio_rate),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_subjects == 0 || self.n_trials == 0 || self.channels == 0 || self.vocab_size == 0 {
            return Err(Error::Config("subjects, trials, channels and vocabulary must be non-empty".into()));
        }
        if !(self.delay_ms.is_finite() && self.delay_ms >= 0.0) {
            return Err(Error::Config("delay must be non-negative".into()));
        }
        if self.snr_db.is_some_and(|s| !s.is_finite()) {
            return Err(Error::Config("SNR must be finite (use none to disable noise)".into()));
        }
        for (name, v) in [
            ("acoustic_gain", self.acoustic_gain),
            ("semantic_gain", self.semantic_gain),
            ("unattended_gain", self.unattended_gain),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        if !(0.0..=1.0).contains(&self.inattentive_fraction) {
            return Err(Error::Config("inattentive_fraction must lie in [0, 1]".into()));
        }
        if self.test_subjects >= self.n_subjects && self.test_subjects > 0 {
            return Err(Error::Config("at least one subject must remain for training".into()));
        }
        if self.sentence_seconds > self.trial_seconds + 1e-9 {
            return Err(Error::Config("sentences cannot be longer than the trial".into()));
        }
        if self.sentence_seconds < 2.0 * SENTENCE_MARGIN_S + 0.5 {
            return Err(Error::Config("sentences must be at least 0.6 s long".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthWord {
    pub text: String,
    /// Stream time.
    pub start_s: f64,
    pub end_s: f64,
    pub carrier_hz: f64,
    pub level: f64,
    pub mod_hz: f64,
    pub mod_phase: f64,
}

impl SynthWord {
    /// Amplitude envelope at stream time `t`.
    fn envelope(&self, t: f64) -> f64 {
        if t < self.start_s || t >= self.end_s {
            return 0.0;
        }
        let ramp = |d: f64| if d >= RAMP_S { 1.0 } else { 0.5 - 0.5 * (PI * d / RAMP_S).cos() };
        let r = ramp(t - self.start_s).min(ramp(self.end_s - t));
        let m = 1.0 + 0.4 * (2.0 * PI * self.mod_hz * (t - self.start_s) + self.mod_phase).sin();
        self.level * r * m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSentence {
    pub id: String,
    pub onset_s: f64,
    pub duration_s: f64,
    /// Indices into the stream's word list.
    pub words: std::ops::Range<usize>,
}

/// One audio stream: a run of sentences made of tone-burst words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStream {
    pub id: String,
    pub duration_s: f64,
    pub words: Vec<SynthWord>,
    pub sentences: Vec<SynthSentence>,
}

impl SynthStream {
    /// Ground-truth amplitude envelope at stream time `t`.
    pub fn envelope_at(&self, t: f64) -> f64 {
        self.word_at(t).map_or(0.0, |w| w.envelope(t))
    }

    pub fn word_at(&self, t: f64) -> Option<&SynthWord> {
        let i = self.words.partition_point(|w| w.end_s <= t);
        self.words.get(i).filter(|w| w.start_s <= t)
    }

    pub fn audio(&self, rate: f64) -> Vec<f64> {
        let n = (self.duration_s * rate).round() as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                match self.word_at(t) {
                    Some(w) => w.envelope(t) * (2.0 * PI * w.carrier_hz * t).sin(),
                    None => 0.0,
                }
            })
            .collect()
    }

    /// Word tokens of sentence `k`, relative to its onset.
    pub fn sentence_tokens(&self, k: usize) -> Vec<WordToken> {
        let s = &self.sentences[k];
        self.words[s.words.clone()]
            .iter()
            .map(|w| WordToken::new(w.text.clone(), w.start_s - s.onset_s, w.end_s - s.onset_s))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrial {
    pub subject: String,
    pub trial: String,
    pub split: Split,
    /// Stream ids: one for natural trials, `[left, right]` for dichotic.
    pub streams: Vec<String>,
    pub attended: Option<Ear>,
    pub scores: Option<(f64, f64)>,
    /// `channels × samples` at the EEG rate.
    pub eeg: Mat,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub config: SynthConfig,
    pub codebook: EmbeddingTable,
    pub montage: Montage,
    pub mixing: Vec<f64>,
    /// `channels × 300`.
    pub projection: Mat,
    pub streams: BTreeMap<String, SynthStream>,
    pub trials: Vec<SynthTrial>,
}

fn word_text(i: usize) -> String {
    format!("w{i:04}")
}

fn make_stream(cfg: &SynthConfig, id: String, rng: &mut impl Rng) -> SynthStream {
    let n_sent = ((cfg.trial_seconds / cfg.sentence_seconds) + 1e-9).floor().max(1.0) as usize;
    let sent_len = cfg.trial_seconds / n_sent as f64;
    let mut words = Vec::new();
    let mut sentences = Vec::new();
    for k in 0..n_sent {
        let onset = k as f64 * sent_len;
        let first = words.len();
        let mut t = onset + SENTENCE_MARGIN_S + rng.gen_range(0.0..0.1);
        loop {
            let dur = rng.gen_range(0.18..0.45);
            if t + dur > onset + sent_len - SENTENCE_MARGIN_S {
                break;
            }
            words.push(SynthWord {
                text: word_text(rng.gen_range(0..cfg.vocab_size)),
                start_s: t,
                end_s: t + dur,
                carrier_hz: rng.gen_range(150.0..600.0),
                level: rng.gen_range(0.3..1.0),
                mod_hz: rng.gen_range(3.0..6.0),
                mod_phase: rng.gen_range(0.0..2.0 * PI),
            });
            t += dur + rng.gen_range(0.02..0.12);
        }
        sentences.push(SynthSentence {
            id: format!("{id}-s{k}"),
            onset_s: onset,
            duration_s: sent_len,
            words: first..words.len(),
        });
    }
    SynthStream {
        id,
        duration_s: cfg.trial_seconds,
        words,
        sentences,
    }
}

/// Unit-RMS 1/f noise by spectral shaping of white Gaussian noise.
pub fn pink_noise(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, v) in buf.iter_mut().enumerate().skip(1) {
        let f = k.min(n - k) as f64;
        *v /= f.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

impl SynthData {
    fn semantic(&self, word: &str) -> Vec<f64> {
        let v = self.codebook.get(word).expect("codebook word");
        (0..self.projection.rows)
            .map(|c| {
                self.projection
                    .row(c)
                    .iter()
                    .zip(v)
                    .map(|(p, &x)| p * f64::from(x))
                    .sum()
            })
            .collect()
    }

    /// Noise-free response of `channels` to one stream at the given gain.
    fn stream_response(&self, stream: &SynthStream, gain: f64, out: &mut Mat) {
        let cfg = &self.config;
        let tau = cfg.delay_ms / 1000.0;
        let mut cache: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for i in 0..out.cols {
            let t = i as f64 / cfg.eeg_rate;
            let env = stream.envelope_at(t - tau);
            let sem = if cfg.semantic_gain > 0.0 {
                stream
                    .word_at(t)
                    .map(|w| cache.entry(&w.text).or_insert_with(|| self.semantic(&w.text)).clone())
            } else {
                None
            };
            for c in 0..out.rows {
                let mut v = cfg.acoustic_gain * self.mixing[c] * env;
                if let Some(s) = &sem {
                    v += cfg.semantic_gain * s[c];
                }
                out.data[c * out.cols + i] += gain * v;
            }
        }
    }
}

/// Builds the whole corpus in memory.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let seed = cfg.seed;

    let mut codebook = EmbeddingTable::new(EMBEDDING_DIM);
    let mut rng = rng_for(seed, &[1]);
    for i in 0..cfg.vocab_size {
        let v: Vec<f32> = (0..EMBEDDING_DIM)
            .map(|_| (CODEBOOK_STD * rng.sample::<f64, _>(StandardNormal)) as f32)
            .collect();
        codebook.insert(&word_text(i), v)?;
    }

    // unit variance per channel over random codebook words
    let mut rng = rng_for(seed, &[2]);
    let scale = 1.0 / (CODEBOOK_STD * (EMBEDDING_DIM as f64).sqrt());
    let projection = Mat::from_vec(
        cfg.channels,
        EMBEDDING_DIM,
        (0..cfg.channels * EMBEDDING_DIM)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )?;

    let mut rng = rng_for(seed, &[3]);
    let mixing: Vec<f64> = (0..cfg.channels)
        .map(|_| {
            if cfg.identity_mixing {
                1.0
            } else {
                rng.sample(StandardNormal)
            }
        })
        .collect();

    let montage = Montage::for_channels(cfg.channels)?;

    let mut streams = BTreeMap::new();
    let trial_ids: Vec<String> = (0..cfg.n_trials).map(|t| format!("t{t:02}")).collect();
    for (ti, tid) in trial_ids.iter().enumerate() {
        match cfg.protocol {
            Protocol::Natural => {
                let mut rng = rng_for(seed, &[4, ti as u64, 0]);
                streams.insert(tid.clone(), make_stream(cfg, tid.clone(), &mut rng));
            }
            Protocol::Dichotic => {
                for (ei, ear) in [Ear::Left, Ear::Right].into_iter().enumerate() {
                    let id = format!("{tid}-{ear}");
                    let mut rng = rng_for(seed, &[4, ti as u64, 1 + ei as u64]);
                    streams.insert(id.clone(), make_stream(cfg, id, &mut rng));
                }
            }
        }
    }

    let mut data = SynthData {
        config: cfg.clone(),
        codebook,
        montage,
        mixing,
        projection,
        streams,
        trials: Vec::new(),
    };

    let n = (cfg.trial_seconds * cfg.eeg_rate).round() as usize;
    for si in 0..cfg.n_subjects {
        let subject = format!("s{si:02}");
        let split = if si >= cfg.n_subjects - cfg.test_subjects {
            Split::Test
        } else {
            Split::Train
        };
        // odd subjects attend the right ear
        let attended_ear = if si % 2 == 0 { Ear::Left } else { Ear::Right };
        for (ti, tid) in trial_ids.iter().enumerate() {
            let mut eeg = Mat::zeros(cfg.channels, n);
            let (stream_ids, attended, scores) = match cfg.protocol {
                Protocol::Natural => {
                    data.stream_response(&data.streams[tid], 1.0, &mut eeg);
                    (vec![tid.clone()], None, None)
                }
                Protocol::Dichotic => {
                    let mut rng = rng_for(seed, &[6, si as u64, ti as u64]);
                    let attentive = rng.gen::<f64>() >= cfg.inattentive_fraction;
                    let (g_att, g_un, scores) = if attentive {
                        (1.0, cfg.unattended_gain, (0.8, 0.2))
                    } else {
                        let g = 0.5 * (1.0 + cfg.unattended_gain);
                        (g, g, (0.5, 0.5))
                    };
                    let att = format!("{tid}-{attended_ear}");
                    let un = format!("{tid}-{}", attended_ear.other());
                    data.stream_response(&data.streams[&att], g_att, &mut eeg);
                    data.stream_response(&data.streams[&un], g_un, &mut eeg);
                    (
                        vec![format!("{tid}-left"), format!("{tid}-right")],
                        Some(attended_ear),
                        Some(scores),
                    )
                }
            };
            if let Some(snr) = cfg.snr_db {
                let mut rng = rng_for(seed, &[5, si as u64, ti as u64]);
                for c in 0..cfg.channels {
                    let row = eeg.row_mut(c);
                    let power = row.iter().map(|v| v * v).sum::<f64>() / n as f64;
                    let power = if power > 0.0 { power } else { 1.0 };
                    let amp = (power / 10f64.powf(snr / 10.0)).sqrt();
                    for (v, z) in row.iter_mut().zip(pink_noise(n, &mut rng)) {
                        *v += amp * z;
                    }
                }
            }
            data.trials.push(SynthTrial {
                subject: subject.clone(),
                trial: tid.clone(),
                split,
                streams: stream_ids,
                attended,
                scores,
                eeg,
            });
        }
    }
    Ok(data)
}

impl SynthData {
    /// Writes the corpus below `dir` and returns the manifest path.
    ///
    /// Layout: `manifest.jsonl`, `montage.csv`, `vocab.emb`, `audio/`,
    /// `eeg/`, and `truth/` with the configuration, mixing weights,
    /// semantic projection and the full word schedule.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        for sub in ["audio", "eeg", "truth"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        self.montage.save(dir.join("montage.csv"))?;
        self.codebook.save(dir.join("vocab.emb"))?;
        let cfg = &self.config;

        let mut records = vec![
            Record::Montage {
                path: "montage.csv".into(),
            },
            Record::Embeddings {
                path: "vocab.emb".into(),
            },
        ];
        for (id, s) in &self.streams {
            let audio = s.audio(cfg.audio_rate);
            let path = format!("audio/{id}.nmtb");
            TensorBlob::f32(vec![audio.len()], audio)?.save(dir.join(&path))?;
            records.push(Record::Audio {
                id: id.clone(),
                path,
                rate: cfg.audio_rate,
            });
        }
        for (id, s) in &self.streams {
            for (k, sent) in s.sentences.iter().enumerate() {
                records.push(Record::Sentence {
                    id: sent.id.clone(),
                    audio: id.clone(),
                    onset_s: sent.onset_s,
                    duration_s: sent.duration_s,
                    tokens: s.sentence_tokens(k),
                });
            }
        }
        let sentence_ids = |stream: &str| -> Vec<String> {
            self.streams[stream].sentences.iter().map(|s| s.id.clone()).collect()
        };
        for t in &self.trials {
            let path = format!("eeg/{}-{}.nmtb", t.subject, t.trial);
            TensorBlob::from_mat(super::tensor::DType::F32, &t.eeg)?.save(dir.join(&path))?;
            let (sentences, left, right) = match cfg.protocol {
                Protocol::Natural => (sentence_ids(&t.streams[0]), vec![], vec![]),
                Protocol::Dichotic => (vec![], sentence_ids(&t.streams[0]), sentence_ids(&t.streams[1])),
            };
            records.push(Record::Eeg {
                subject: t.subject.clone(),
                trial: t.trial.clone(),
                split: t.split,
                path,
                rate: cfg.eeg_rate,
                sentences,
                left,
                right,
            });
        }
        for t in &self.trials {
            if let (Some(ear), Some((a, u))) = (t.attended, t.scores) {
                records.push(Record::Behavior {
                    subject: t.subject.clone(),
                    trial: t.trial.clone(),
                    attended_ear: ear,
                    attended_score: a,
                    unattended_score: u,
                });
            }
        }

        std::fs::write(dir.join("truth/config.json"), serde_json::to_vec_pretty(cfg)?)?;
        std::fs::write(dir.join("truth/streams.json"), serde_json::to_vec(&self.streams)?)?;
        TensorBlob::f64(vec![self.mixing.len()], self.mixing.clone())?.save(dir.join("truth/mixing.nmtb"))?;
        TensorBlob::from_mat(super::tensor::DType::F64, &self.projection)?.save(dir.join("truth/projection.nmtb"))?;

        let manifest = dir.join("manifest.jsonl");
        save_manifest(&manifest, &records)?;
        Ok(manifest)
    }
}

/// Generates a corpus on disk; returns the manifest path.
pub fn generate_synthetic(cfg: &SynthConfig, dir: impl AsRef<Path>) -> Result<PathBuf> {
    generate(cfg)?.write(dir)
}
