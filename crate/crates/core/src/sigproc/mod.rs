//! Deterministic DSP primitives: Butterworth design, zero-phase filtering,
//! polyphase decimation, Hilbert envelopes and per-channel z-scoring.
//!
//! Everything here is a pure function of its inputs.

mod hilbert;
mod iir;
mod resample;
mod zscore;

pub use hilbert::hilbert_envelope;
pub use iir::{design_butterworth, filtfilt, filtfilt_slice, FilterDesign, FilterKind, IirFilter};
pub use resample::{resample, resample_slice};
pub use zscore::{zscore, zscore_slice, ZScored};

use crate::error::{Error, Result};

/// A multichannel signal stored channel-major (`channels × frames`).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    data: Vec<f64>,
    channels: usize,
    frames: usize,
    rate: f64,
    labels: Vec<String>,
}

impl TimeSeries {
    /// Builds a series from channel-major samples. Labels default to
    /// `ch0, ch1, ...` when `labels` is empty.
    pub fn new(
        data: Vec<f64>,
        channels: usize,
        rate: f64,
        labels: Vec<String>,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidInput("time series needs at least one channel".into()));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidInput(format!("sampling rate must be positive, got {rate}")));
        }
        if data.len() % channels != 0 {
            return Err(Error::Shape(format!(
                "{} samples do not divide into {channels} channels",
                data.len()
            )));
        }
        let frames = data.len() / channels;
        if frames == 0 {
            return Err(Error::InvalidInput("time series needs at least one frame".into()));
        }
        let labels = if labels.is_empty() {
            (0..channels).map(|c| format!("ch{c}")).collect()
        } else if labels.len() == channels {
            labels
        } else {
            return Err(Error::Shape(format!(
                "{} labels for {channels} channels",
                labels.len()
            )));
        };
        Ok(Self {
            data,
            channels,
            frames,
            rate,
            labels,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], rate: f64) -> Result<Self> {
        let frames = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != frames) {
            return Err(Error::Shape("rows have different lengths".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(data, rows.len(), rate, Vec::new())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.frames..(c + 1) * self.frames]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.frames..(c + 1) * self.frames]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.frames)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Applies `f` to every channel, producing a series with the same
    /// channel labels at `rate`.
    pub(crate) fn map_channels<F>(&self, rate: f64, mut f: F) -> Result<TimeSeries>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let mut data = Vec::new();
        for row in self.rows() {
            data.extend(f(row)?);
        }
        TimeSeries::new(data, self.channels, rate, self.labels.clone())
    }

    /// Copies of the selected rows, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<TimeSeries> {
        if channels.is_empty() {
            return Err(Error::InvalidInput("empty channel selection".into()));
        }
        let mut data = Vec::with_capacity(channels.len() * self.frames);
        let mut labels = Vec::with_capacity(channels.len());
        for &c in channels {
            if c >= self.channels {
                return Err(Error::InvalidInput(format!(
                    "channel {c} out of range ({} channels)",
                    self.channels
                )));
            }
            data.extend_from_slice(self.channel(c));
            labels.push(self.labels[c].clone());
        }
        TimeSeries::new(data, channels.len(), self.rate, labels)
    }

    /// Frames `[start, end)` of every channel.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<TimeSeries> {
        if start >= end || end > self.frames {
            return Err(Error::InvalidInput(format!(
                "frame range {start}..{end} invalid for {} frames",
                self.frames
            )));
        }
        let mut data = Vec::with_capacity(self.channels * (end - start));
        for row in self.rows() {
            data.extend_from_slice(&row[start..end]);
        }
        TimeSeries::new(data, self.channels, self.rate, self.labels.clone())
    }
}
