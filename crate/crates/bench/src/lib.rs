//! Deterministic inputs shared by the benchmarks.

use neuromatch::model::{Mat, ModelConfig};
use neuromatch::pairs::{PreparedPair, PreparedStimulus};

/// A chirp-like test signal; no RNG so runs are comparable.
pub fn signal(n: usize, rate: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            (2.0 * std::f64::consts::PI * (3.0 + 7.0 * t) * t).sin() + 0.3 * (0.37 * i as f64).cos()
        })
        .collect()
}

fn stimulus(id: &str, t: usize, words: usize, text_dim: usize, phase: f64) -> PreparedStimulus {
    let n2 = t.div_ceil(3);
    PreparedStimulus {
        id: id.into(),
        envelope: (0..t).map(|i| (0.05 * i as f64 + phase).sin().abs()).collect(),
        windows: (0..words).map(|k| (k * n2 / words, (k + 1) * n2 / words)).collect(),
        embeddings: Mat::from_vec(
            words,
            text_dim,
            (0..words * text_dim).map(|i| (i as f64 * 0.7 + phase).cos()).collect(),
        )
        .unwrap(),
    }
}

/// One 4-second pair at 64 Hz for a model with `cfg`'s channels and word
/// vectors.
pub fn pair(cfg: &ModelConfig) -> PreparedPair {
    let t = 256;
    let pos = stimulus("pos", t, 10, cfg.text_dim, 0.0);
    let neg = stimulus("neg", t, 10, cfg.text_dim, 1.3);
    let eeg = (0..cfg.eeg_channels)
        .flat_map(|c| pos.envelope.iter().enumerate().map(move |(i, v)| v + 0.1 * ((i * (c + 1)) as f64).sin()))
        .collect();
    PreparedPair {
        id: "bench".into(),
        subject: "s".into(),
        trial: "t".into(),
        eeg: Mat::from_vec(cfg.eeg_channels, t, eeg).unwrap(),
        pos,
        neg,
    }
}
