//! Envelope as the magnitude of the FFT-based analytic signal.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const MIN_ENVELOPE_LEN: usize = 16;

/// Magnitude of the analytic signal of `signal`.
///
/// The sampling rate does not enter the computation; it is validated so
/// callers cannot pass a nonsensical one.
pub fn hilbert_envelope(signal: &[f64], rate: f64) -> Result<Vec<f64>> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::InvalidInput(format!("sampling rate must be positive, got {rate}")));
    }
    let n = signal.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty signal".into()));
    }
    if n < MIN_ENVELOPE_LEN {
        return Err(Error::TooShort(format!(
            "envelope needs at least {MIN_ENVELOPE_LEN} samples, got {n}"
        )));
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);

    // one-sided spectrum: keep DC (and Nyquist for even n), double positives
    let half = n / 2;
    let positive_end = if n % 2 == 0 { half } else { half + 1 };
    for v in &mut buf[1..positive_end] {
        *v *= 2.0;
    }
    for v in &mut buf[half + 1..] {
        *v = Complex64::new(0.0, 0.0);
    }

    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf.iter().map(|c| c.norm() * scale).collect())
}
