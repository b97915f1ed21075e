//! The EEG preprocessing chain:
//!
//! ```text
//! lowpass(32 Hz) → highpass(0.5 Hz) → resample(64 Hz)
//!   → variance rejection + spherical-spline interpolation
//!   → mastoid re-reference → per-channel z-score
//! ```
//!
//! Rejection runs after decimation; the report records every stage so the
//! order is auditable.

mod montage;
mod spline;

pub use montage::{Electrode, Layout, Montage, Region};
pub use spline::{interpolation_matrix, spline_kernel, LEGENDRE_TERMS, SPLINE_ORDER};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sigproc::{self, design_butterworth, filtfilt, FilterKind, TimeSeries};

pub const MIN_REJECTION_CHANNELS: usize = 8;
pub const MAX_BAD_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectPolicy {
    /// A channel is bad when its variance exceeds `multiplier × median`.
    pub multiplier: f64,
}

impl Default for RejectPolicy {
    fn default() -> Self {
        Self { multiplier: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub variances: Vec<f64>,
    pub median: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Lowpass,
    Highpass,
    Resample,
    Reject,
    Interpolate,
    Rereference,
    Zscore,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Lowpass => "lowpass",
            Stage::Highpass => "highpass",
            Stage::Resample => "resample",
            Stage::Reject => "reject",
            Stage::Interpolate => "interpolate",
            Stage::Rereference => "rereference",
            Stage::Zscore => "zscore",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocReport {
    pub rejected: Vec<usize>,
    pub variances: Vec<f64>,
    pub flat_channels: Vec<usize>,
    pub stages: Vec<StageRecord>,
}

impl PreprocReport {
    fn log(&mut self, stage: Stage, detail: impl Into<String>) {
        self.stages.push(StageRecord {
            stage,
            detail: detail.into(),
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocConfig {
    pub lowpass_hz: f64,
    pub highpass_hz: f64,
    pub filter_order: usize,
    pub target_rate: f64,
    pub reject: RejectPolicy,
    pub allowed_rates: Vec<f64>,
    /// Off for recordings that arrive already referenced.
    pub rereference: bool,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        Self {
            lowpass_hz: 32.0,
            highpass_hz: 0.5,
            filter_order: 4,
            target_rate: 64.0,
            reject: RejectPolicy::default(),
            allowed_rates: vec![512.0, 8192.0],
            rereference: true,
        }
    }
}

fn population_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Indices whose variance exceeds `multiplier × median(variances)`.
pub fn flag_high_variance(variances: &[f64], multiplier: f64) -> Vec<usize> {
    if variances.is_empty() {
        return Vec::new();
    }
    let threshold = multiplier * median(variances);
    (0..variances.len())
        .filter(|&i| variances[i] > threshold)
        .collect()
}

/// Variance-based bad-channel detection.
pub fn reject_channels(
    ts: &TimeSeries,
    policy: RejectPolicy,
) -> Result<(Vec<usize>, RejectionReport)> {
    if ts.channels() < MIN_REJECTION_CHANNELS {
        return Err(Error::InvalidInput(format!(
            "channel rejection needs at least {MIN_REJECTION_CHANNELS} channels, got {}",
            ts.channels()
        )));
    }
    let variances: Vec<f64> = ts.rows().map(population_variance).collect();
    let bad = flag_high_variance(&variances, policy.multiplier);
    if bad.len() as f64 > MAX_BAD_FRACTION * ts.channels() as f64 {
        return Err(Error::TooManyBadChannels {
            bad: bad.len(),
            total: ts.channels(),
        });
    }
    let med = median(&variances);
    Ok((
        bad,
        RejectionReport {
            threshold: policy.multiplier * med,
            median: med,
            variances,
        },
    ))
}

fn check_montage(ts: &TimeSeries, montage: &Montage) -> Result<()> {
    if montage.len() != ts.channels() {
        return Err(Error::Config(format!(
            "montage has {} positions for {} channels",
            montage.len(),
            ts.channels()
        )));
    }
    Ok(())
}

/// Replaces the `bad` rows by a spherical-spline fit to the remaining
/// channels. Good rows are copied unchanged.
pub fn interpolate_channels(ts: &TimeSeries, bad: &[usize], montage: &Montage) -> Result<TimeSeries> {
    check_montage(ts, montage)?;
    if bad.is_empty() {
        return Err(Error::InvalidInput("no channels to interpolate".into()));
    }
    if let Some(&c) = bad.iter().find(|&&c| c >= ts.channels()) {
        return Err(Error::InvalidInput(format!("bad channel {c} out of range")));
    }
    let positions = montage.positions();
    let good: Vec<usize> = (0..ts.channels()).filter(|c| !bad.contains(c)).collect();
    let sources: Vec<[f64; 3]> = good.iter().map(|&c| positions[c]).collect();
    let targets: Vec<[f64; 3]> = bad.iter().map(|&c| positions[c]).collect();
    let weights = interpolation_matrix(&sources, &targets)?;

    let mut out = ts.clone();
    for (row_w, &b) in weights.iter().zip(bad) {
        let mut row = vec![0.0; ts.frames()];
        for (&w, &g) in row_w.iter().zip(&good) {
            for (r, v) in row.iter_mut().zip(ts.channel(g)) {
                *r += w * v;
            }
        }
        out.channel_mut(b).copy_from_slice(&row);
    }
    Ok(out)
}

/// Subtracts the per-frame mean of the mastoid channels from every channel.
pub fn rereference(ts: &TimeSeries, montage: &Montage) -> Result<TimeSeries> {
    check_montage(ts, montage)?;
    let mastoids = montage.mastoids();
    if mastoids.is_empty() {
        return Err(Error::Config("montage defines no mastoid channels".into()));
    }
    let reference: Vec<f64> = (0..ts.frames())
        .map(|t| mastoids.iter().map(|&m| ts.channel(m)[t]).sum::<f64>() / mastoids.len() as f64)
        .collect();
    let mut out = ts.clone();
    for c in 0..out.channels() {
        for (v, r) in out.channel_mut(c).iter_mut().zip(&reference) {
            *v -= r;
        }
    }
    Ok(out)
}

/// Runs the full chain and returns the 64 Hz standardized series.
pub fn preprocess(
    ts: &TimeSeries,
    montage: &Montage,
    config: &PreprocConfig,
) -> Result<(TimeSeries, PreprocReport)> {
    if !config
        .allowed_rates
        .iter()
        .any(|&r| (r - ts.rate()).abs() < 1e-9)
    {
        return Err(Error::Config(format!(
            "input rate {} Hz not in the allowed set {:?}",
            ts.rate(),
            config.allowed_rates
        )));
    }
    check_montage(ts, montage)?;
    let mut report = PreprocReport::default();

    let lp = design_butterworth(FilterKind::Lowpass, config.lowpass_hz, config.filter_order, ts.rate())
        .and_then(|f| filtfilt(&f, ts))
        .map_err(|e| e.at_stage("lowpass"))?;
    report.log(Stage::Lowpass, format!("{} Hz, order {}", config.lowpass_hz, config.filter_order));

    let hp = design_butterworth(FilterKind::Highpass, config.highpass_hz, config.filter_order, ts.rate())
        .and_then(|f| filtfilt(&f, &lp))
        .map_err(|e| e.at_stage("highpass"))?;
    report.log(Stage::Highpass, format!("{} Hz, order {}", config.highpass_hz, config.filter_order));

    let mut x = sigproc::resample(&hp, config.target_rate).map_err(|e| e.at_stage("resample"))?;
    report.log(Stage::Resample, format!("{} Hz -> {} Hz", ts.rate(), config.target_rate));

    let (bad, rejection) = reject_channels(&x, config.reject).map_err(|e| e.at_stage("reject"))?;
    report.log(
        Stage::Reject,
        format!("threshold {:.6e}, rejected {:?}", rejection.threshold, bad),
    );
    report.variances = rejection.variances;
    report.rejected = bad.clone();

    if bad.is_empty() {
        report.log(Stage::Interpolate, "nothing to interpolate");
    } else {
        x = interpolate_channels(&x, &bad, montage).map_err(|e| e.at_stage("interpolate"))?;
        report.log(Stage::Interpolate, format!("{} channels", bad.len()));
    }

    if config.rereference {
        x = rereference(&x, montage).map_err(|e| e.at_stage("rereference"))?;
        report.log(Stage::Rereference, format!("mastoids {:?}", montage.mastoids()));
    } else {
        report.log(Stage::Rereference, "skipped (pre-referenced input)");
    }

    let z = sigproc::zscore(&x);
    report.flat_channels = z.flat_channels;
    report.log(Stage::Zscore, "per channel");
    Ok((z.series, report))
}
