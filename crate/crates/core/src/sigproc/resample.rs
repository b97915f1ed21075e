//! Rational-ratio decimation: Kaiser-windowed sinc anti-alias filter applied
//! polyphase-style, centred so the output has no group delay.

use std::f64::consts::PI;

use super::TimeSeries;
use crate::error::{Error, Result};

const KAISER_BETA: f64 = 5.0;
/// Taps per side, in units of the larger of the up/down factors.
const HALF_WIDTH: usize = 10;
/// Anti-alias cutoff as a fraction of the target Nyquist frequency.
const CUTOFF_FRACTION: f64 = 0.9;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `target / rate` as a reduced fraction `up / down`.
fn rational_ratio(rate: f64, target: f64) -> Result<(usize, usize)> {
    let near_int = |v: f64| (v - v.round()).abs() < 1e-9 * v.max(1.0);
    if near_int(rate) && near_int(target) {
        let (r, t) = (rate.round() as u64, target.round() as u64);
        let g = gcd(r, t);
        return Ok(((t / g) as usize, (r / g) as usize));
    }
    // continued fraction with a bounded denominator
    let x = target / rate;
    let (mut h0, mut h1, mut k0, mut k1) = (0u64, 1u64, 1u64, 0u64);
    let mut v = x;
    for _ in 0..32 {
        let a = v.floor() as u64;
        let h2 = a * h1 + h0;
        let k2 = a * k1 + k0;
        if k2 > 10_000 {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        if ((h1 as f64 / k1 as f64) - x).abs() < 1e-12 * x {
            return Ok((h1 as usize, k1 as usize));
        }
        let frac = v - a as f64;
        if frac < 1e-15 {
            break;
        }
        v = 1.0 / frac;
    }
    Err(Error::Unsupported(format!(
        "rate ratio {target}/{rate} is not a small rational"
    )))
}

/// Downsamples one channel from `rate` to `target`.
pub fn resample_slice(x: &[f64], rate: f64, target: f64) -> Result<Vec<f64>> {
    if !(target.is_finite() && target > 0.0 && rate.is_finite() && rate > 0.0) {
        return Err(Error::InvalidInput(format!("bad rates {rate} -> {target}")));
    }
    if target > rate {
        return Err(Error::Unsupported(format!(
            "upsampling {rate} Hz -> {target} Hz"
        )));
    }
    if x.is_empty() {
        return Err(Error::InvalidInput("cannot resample an empty signal".into()));
    }
    if target == rate {
        return Ok(x.to_vec());
    }
    let (up, down) = rational_ratio(rate, target)?;
    let half = HALF_WIDTH * up.max(down);
    // cutoff in cycles per sample of the upsampled stream
    let fc = CUTOFF_FRACTION * 0.5 / down as f64;
    let taps: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let k = i as f64 - half as f64;
            let sinc = if k == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * k).sin() / (PI * k)
            };
            let r = k / half as f64;
            sinc * bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(KAISER_BETA)
        })
        .collect();

    // one normalized weight set per polyphase branch
    let phases: Vec<(i64, Vec<f64>)> = (0..up)
        .map(|p| {
            // upsampled position u ≡ p (mod up); input i sits at i·up
            let first = (p as i64 - half as i64).div_euclid(up as i64)
                + i64::from((p as i64 - half as i64).rem_euclid(up as i64) != 0);
            let mut w = Vec::new();
            let mut i = first;
            while i * up as i64 <= p as i64 + half as i64 {
                let tap = (p as i64 - i * up as i64 + half as i64) as usize;
                w.push(taps[tap]);
                i += 1;
            }
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            (first, w)
        })
        .collect();

    let n_out = ((x.len() * up) as f64 / down as f64).round().max(1.0) as usize;
    let last = x.len() as i64 - 1;
    let out = (0..n_out)
        .map(|j| {
            let u = (j * down) as i64;
            let p = u.rem_euclid(up as i64) as usize;
            let base = u.div_euclid(up as i64);
            let (first, w) = &phases[p];
            w.iter()
                .enumerate()
                .map(|(m, &wm)| {
                    let idx = (base + first + m as i64).clamp(0, last) as usize;
                    wm * x[idx]
                })
                .sum()
        })
        .collect();
    Ok(out)
}

/// Resamples every channel to `target_rate`. Same-rate requests are a no-op.
pub fn resample(ts: &TimeSeries, target_rate: f64) -> Result<TimeSeries> {
    ts.map_channels(target_rate, |row| resample_slice(row, ts.rate(), target_rate))
}
