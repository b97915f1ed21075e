//! Matched / mismatched example construction.

use rand::Rng;

use crate::data::{Ear, Protocol};
use crate::error::{Error, Result};
use crate::model::{Candidate, Mat, PairInput};
use crate::stimulus::{windows_for, BoundaryMode, SentenceStimulus, Window, WordToken, FEATURE_RATE};

/// The fusion weights a training sample may draw.
pub const LAMBDA_CHOICES: [f64; 3] = [0.0, 0.5, 1.0];

/// One sentence of EEG with the stimulus that evoked it, both at 64 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub subject: String,
    pub trial: String,
    pub eeg: Mat,
    pub stimulus: SentenceStimulus,
}

/// An `(E, S⁺, S⁻)` example.
#[derive(Debug, Clone, PartialEq)]
pub struct MmPair {
    pub protocol: Protocol,
    pub subject: String,
    pub trial: String,
    pub eeg: Mat,
    pub pos: SentenceStimulus,
    pub neg: SentenceStimulus,
}

impl MmPair {
    pub fn id(&self) -> String {
        format!("{}/{}/{}", self.subject, self.trial, self.pos.id)
    }

    pub fn swapped(&self) -> MmPair {
        MmPair {
            pos: self.neg.clone(),
            neg: self.pos.clone(),
            ..self.clone()
        }
    }
}

/// Pairs plus a note for everything that had to be skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<MmPair>,
    pub skipped: Vec<String>,
}

impl PairSet {
    pub fn extend(&mut self, other: PairSet) {
        self.pairs.extend(other.pairs);
        self.skipped.extend(other.skipped);
    }
}

/// One pair per sentence of a session; the mismatched stimulus is another
/// sentence of the same session, drawn uniformly, cut or zero-padded to the
/// matched sentence's length. Sessions with fewer than two sentences yield
/// no pairs and a skip note.
pub fn make_natural_pairs<R: Rng>(session: &[Segment], rng: &mut R) -> PairSet {
    let mut out = PairSet::default();
    if session.len() < 2 {
        if let Some(s) = session.first() {
            out.skipped.push(format!(
                "session {} has a single sentence ({}), no mismatch available",
                s.subject, s.stimulus.id
            ));
        }
        return out;
    }
    for (i, seg) in session.iter().enumerate() {
        let mut j = rng.gen_range(0..session.len() - 1);
        if j >= i {
            j += 1;
        }
        let frames = seg.eeg.cols;
        let neg = session[j].stimulus.fit_to(frames);
        if neg.tokens.is_empty() {
            out.skipped.push(format!(
                "{}: mismatch {} has no words within {frames} frames",
                seg.stimulus.id, session[j].stimulus.id
            ));
            continue;
        }
        out.pairs.push(MmPair {
            protocol: Protocol::Natural,
            subject: seg.subject.clone(),
            trial: seg.trial.clone(),
            eeg: seg.eeg.clone(),
            pos: seg.stimulus.fit_to(frames),
            neg,
        });
    }
    out
}

/// A sentence placed on a stream's time line.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSentence {
    pub id: String,
    pub onset_s: f64,
    pub duration_s: f64,
    /// Relative to `onset_s`.
    pub tokens: Vec<WordToken>,
    pub embeddings: Vec<Vec<f64>>,
}

/// One ear's stream over a whole trial.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamFeatures {
    pub id: String,
    /// 64 Hz envelope from time zero of the trial.
    pub envelope: Vec<f64>,
    pub sentences: Vec<StreamSentence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DichoticTrial {
    pub subject: String,
    pub trial: String,
    pub attended: Ear,
    /// `channels × T` at 64 Hz for the whole trial.
    pub eeg: Mat,
    pub left: StreamFeatures,
    pub right: StreamFeatures,
}

impl DichoticTrial {
    pub fn stream(&self, ear: Ear) -> &StreamFeatures {
        match ear {
            Ear::Left => &self.left,
            Ear::Right => &self.right,
        }
    }
}

fn frame_of(t: f64) -> usize {
    (t * FEATURE_RATE).round().max(0.0) as usize
}

/// Cuts the trial at the attended stream's sentence boundaries. Each
/// segment is matched with the attended sentence and mismatched with
/// whatever the other ear played during the same span.
pub fn make_dichotic_pairs(trial: &DichoticTrial) -> PairSet {
    let mut out = PairSet::default();
    let att = trial.stream(trial.attended);
    let un = trial.stream(trial.attended.other());
    if un.sentences.is_empty() {
        out.skipped.push(format!(
            "{}/{}: no transcript for the unattended stream",
            trial.subject, trial.trial
        ));
        return out;
    }
    let limit = trial.eeg.cols.min(att.envelope.len()).min(un.envelope.len());
    for s in &att.sentences {
        let a = frame_of(s.onset_s);
        let b = (a + frame_of(s.duration_s)).min(limit);
        if b <= a {
            out.skipped.push(format!("{}: outside the recording", s.id));
            continue;
        }
        let frames = b - a;
        let span = (a as f64 / FEATURE_RATE, b as f64 / FEATURE_RATE);
        let pos = SentenceStimulus {
            id: s.id.clone(),
            envelope: att.envelope[a..b].to_vec(),
            tokens: s.tokens.clone(),
            embeddings: s.embeddings.clone(),
        }
        .fit_to(frames);

        let mut tokens = Vec::new();
        let mut embeddings = Vec::new();
        for u in &un.sentences {
            for (tok, emb) in u.tokens.iter().zip(&u.embeddings) {
                let (ws, we) = (u.onset_s + tok.start_s, u.onset_s + tok.end_s);
                let (cs, ce) = (ws.max(span.0), we.min(span.1));
                if ce - cs > 1e-6 {
                    tokens.push(WordToken::new(tok.text.clone(), cs - span.0, ce - span.0));
                    embeddings.push(emb.clone());
                }
            }
        }
        let neg = SentenceStimulus {
            id: format!("{}[{a}:{b}]", un.id),
            envelope: un.envelope[a..b].to_vec(),
            tokens,
            embeddings,
        }
        .fit_to(frames);
        if pos.tokens.is_empty() || neg.tokens.is_empty() {
            out.skipped.push(format!("{}: no words in one of the streams", s.id));
            continue;
        }
        out.pairs.push(MmPair {
            protocol: Protocol::Dichotic,
            subject: trial.subject.clone(),
            trial: trial.trial.clone(),
            eeg: Mat::from_rows(
                &(0..trial.eeg.rows)
                    .map(|c| trial.eeg.row(c)[a..b].to_vec())
                    .collect::<Vec<_>>(),
            )
            .expect("rows of equal length"),
            pos,
            neg,
        });
    }
    out
}

/// Uniform over `{0, 0.5, 1}`.
pub fn sample_lambda<R: Rng>(rng: &mut R) -> f64 {
    LAMBDA_CHOICES[rng.gen_range(0..LAMBDA_CHOICES.len())]
}

/// Model-ready candidate: envelope, pooling windows, word vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedStimulus {
    pub id: String,
    pub envelope: Vec<f64>,
    pub windows: Vec<Window>,
    pub embeddings: Mat,
}

impl PreparedStimulus {
    pub fn new<R: Rng>(stim: &SentenceStimulus, mode: BoundaryMode, rng: &mut R) -> Result<Self> {
        let windows = windows_for(stim, mode, rng)?;
        if stim.embeddings.is_empty() {
            return Err(Error::InvalidInput(format!("sentence {} has no words", stim.id)));
        }
        Ok(Self {
            id: stim.id.clone(),
            envelope: stim.envelope.clone(),
            windows,
            embeddings: Mat::from_rows(&stim.embeddings)?,
        })
    }

    pub fn candidate(&self) -> Candidate<'_> {
        Candidate {
            envelope: &self.envelope,
            windows: &self.windows,
            embeddings: &self.embeddings,
        }
    }
}

/// A pair with windows drawn and, optionally, a channel subset applied.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPair {
    pub id: String,
    pub subject: String,
    pub trial: String,
    pub eeg: Mat,
    pub pos: PreparedStimulus,
    pub neg: PreparedStimulus,
}

impl PreparedPair {
    pub fn new<R: Rng>(pair: &MmPair, mode: BoundaryMode, channels: Option<&[usize]>, rng: &mut R) -> Result<Self> {
        let eeg = match channels {
            None => pair.eeg.clone(),
            Some(ch) => {
                let rows = ch
                    .iter()
                    .map(|&c| {
                        (c < pair.eeg.rows)
                            .then(|| pair.eeg.row(c).to_vec())
                            .ok_or_else(|| Error::InvalidInput(format!("channel {c} out of range")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Mat::from_rows(&rows)?
            }
        };
        Ok(Self {
            id: pair.id(),
            subject: pair.subject.clone(),
            trial: pair.trial.clone(),
            eeg,
            pos: PreparedStimulus::new(&pair.pos, mode, rng)?,
            neg: PreparedStimulus::new(&pair.neg, mode, rng)?,
        })
    }

    pub fn input(&self) -> PairInput<'_> {
        PairInput {
            eeg: &self.eeg,
            pos: self.pos.candidate(),
            neg: self.neg.candidate(),
        }
    }
}
