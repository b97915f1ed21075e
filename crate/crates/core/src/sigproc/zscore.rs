use super::TimeSeries;

/// Output of [`zscore`]: the standardized series plus the channels that had
/// zero variance and were therefore set to zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScored {
    pub series: TimeSeries,
    pub flat_channels: Vec<usize>,
}

/// Standardizes one channel in place with the population standard
/// deviation. Returns `false` (and zeros the channel) if it is constant.
pub fn zscore_slice(x: &mut [f64]) -> bool {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > f64::EPSILON * mean.abs().max(f64::MIN_POSITIVE)) || !std.is_finite() {
        x.iter_mut().for_each(|v| *v = 0.0);
        return false;
    }
    x.iter_mut().for_each(|v| *v = (*v - mean) / std);
    true
}

/// Per-channel z-score (mean 0, population std 1).
pub fn zscore(ts: &TimeSeries) -> ZScored {
    let mut series = ts.clone();
    let mut flat_channels = Vec::new();
    for c in 0..series.channels() {
        if !zscore_slice(series.channel_mut(c)) {
            flat_channels.push(c);
        }
    }
    ZScored {
        series,
        flat_channels,
    }
}
