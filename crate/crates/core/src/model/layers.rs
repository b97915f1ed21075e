use std::ops::Range;

use rand::Rng;

use super::params::{Init, ParamLayout};
use super::tensor::Mat;
use crate::error::{Error, Result};
use crate::stimulus::Window;

pub const LEAKY_SLOPE: f64 = 0.01;

/// Temporal convolution over an `in_h × T` input whose kernel spans the full
/// height: `y[f, j] = b[f] + Σ_h Σ_k w[f, h, k] · x[h, j·stride + k − pad]`
/// with `pad = (k − 1) / 2` and zeros outside the input. The output has
/// `ceil(T / stride)` columns.
///
/// A 1-D convolution over channels and a 2-D convolution whose kernel height
/// equals the map count are both instances of this.
#[derive(Debug, Clone)]
pub struct Conv {
    w: Range<usize>,
    b: Range<usize>,
    pub in_h: usize,
    pub out_f: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv {
    pub fn new(layout: &mut ParamLayout, name: &str, in_h: usize, out_f: usize, kernel: usize, stride: usize, gain: f64) -> Self {
        let bound = gain / ((in_h * kernel) as f64).sqrt();
        Self {
            w: layout.add(format!("{name}.weight"), &[out_f, in_h, kernel], Init::Uniform(bound)),
            b: layout.add(format!("{name}.bias"), &[out_f], Init::Const(0.0)),
            in_h,
            out_f,
            kernel,
            stride,
        }
    }

    pub fn out_len(&self, t: usize) -> usize {
        t.div_ceil(self.stride)
    }

    fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// Output columns `j` for which input index `j·stride + k − pad` is valid.
    fn valid(&self, k: usize, t_in: usize, t_out: usize) -> Range<usize> {
        let (s, pad) = (self.stride, self.pad());
        let lo = if pad > k { (pad - k).div_ceil(s) } else { 0 };
        let hi = if t_in + pad > k { ((t_in - 1 + pad - k) / s + 1).min(t_out) } else { 0 };
        lo..hi.max(lo)
    }

    pub fn forward(&self, p: &[f64], x: &Mat) -> Mat {
        debug_assert_eq!(x.rows, self.in_h);
        let t_out = self.out_len(x.cols);
        let (w, b) = (&p[self.w.clone()], &p[self.b.clone()]);
        let mut y = Mat::zeros(self.out_f, t_out);
        for f in 0..self.out_f {
            let yf = y.row_mut(f);
            yf.fill(b[f]);
            for h in 0..self.in_h {
                let xh = x.row(h);
                for k in 0..self.kernel {
                    let wk = w[(f * self.in_h + h) * self.kernel + k];
                    let valid = self.valid(k, x.cols, t_out);
                    let (s, pad) = (self.stride, self.pad());
                    for j in valid {
                        yf[j] += wk * xh[j * s + k - pad];
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `g`; returns the input gradient
    /// when `need_dx`.
    pub fn backward(&self, p: &[f64], x: &Mat, dy: &Mat, g: &mut [f64], need_dx: bool) -> Option<Mat> {
        let w = &p[self.w.clone()];
        let mut dx = need_dx.then(|| Mat::zeros(x.rows, x.cols));
        {
            let gb = &mut g[self.b.clone()];
            for f in 0..self.out_f {
                gb[f] += dy.row(f).iter().sum::<f64>();
            }
        }
        let gw_range = self.w.clone();
        for f in 0..self.out_f {
            let dyf = dy.row(f);
            for h in 0..self.in_h {
                let xh = x.row(h);
                for k in 0..self.kernel {
                    let idx = (f * self.in_h + h) * self.kernel + k;
                    let valid = self.valid(k, x.cols, dy.cols);
                    let (s, pad) = (self.stride, self.pad());
                    let mut acc = 0.0;
                    for j in valid.clone() {
                        acc += dyf[j] * xh[j * s + k - pad];
                    }
                    g[gw_range.start + idx] += acc;
                    if let Some(dx) = dx.as_mut() {
                        let wk = w[idx];
                        let dxh = dx.row_mut(h);
                        for j in valid {
                            dxh[j * s + k - pad] += wk * dyf[j];
                        }
                    }
                }
            }
        }
        dx
    }
}

/// `y = x · W + b` applied row-wise; `W` is `d_in × d_out`.
#[derive(Debug, Clone)]
pub struct Linear {
    w: Range<usize>,
    b: Range<usize>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, d_in: usize, d_out: usize, gain: f64) -> Self {
        let bound = gain / (d_in as f64).sqrt();
        Self {
            w: layout.add(format!("{name}.weight"), &[d_in, d_out], Init::Uniform(bound)),
            b: layout.add(format!("{name}.bias"), &[d_out], Init::Const(0.0)),
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, p: &[f64], x: &Mat) -> Mat {
        let (w, b) = (&p[self.w.clone()], &p[self.b.clone()]);
        let mut y = Mat::zeros(x.rows, self.d_out);
        for r in 0..x.rows {
            let yr = y.row_mut(r);
            yr.copy_from_slice(b);
            for (i, &xi) in x.row(r).iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let wi = &w[i * self.d_out..(i + 1) * self.d_out];
                for (y, &wv) in yr.iter_mut().zip(wi) {
                    *y += xi * wv;
                }
            }
        }
        y
    }

    pub fn backward(&self, p: &[f64], x: &Mat, dy: &Mat, g: &mut [f64], need_dx: bool) -> Option<Mat> {
        let w = &p[self.w.clone()];
        for r in 0..x.rows {
            let dyr = dy.row(r);
            for (gb, d) in g[self.b.clone()].iter_mut().zip(dyr) {
                *gb += d;
            }
            let gw = &mut g[self.w.clone()];
            for (i, &xi) in x.row(r).iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (gv, d) in gw[i * self.d_out..(i + 1) * self.d_out].iter_mut().zip(dyr) {
                    *gv += xi * d;
                }
            }
        }
        need_dx.then(|| {
            let mut dx = Mat::zeros(x.rows, self.d_in);
            for r in 0..x.rows {
                let dyr = dy.row(r);
                for (i, dxi) in dx.row_mut(r).iter_mut().enumerate() {
                    *dxi = w[i * self.d_out..(i + 1) * self.d_out]
                        .iter()
                        .zip(dyr)
                        .map(|(a, b)| a * b)
                        .sum();
                }
            }
            dx
        })
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer normalization with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: Range<usize>,
    bias: Range<usize>,
}

pub struct LayerNormCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize, gain: f64) -> Self {
        Self {
            gain: layout.add(format!("{name}.gain"), &[dim], Init::Const(gain)),
            bias: layout.add(format!("{name}.bias"), &[dim], Init::Const(0.0)),
        }
    }

    pub fn forward(&self, p: &[f64], x: &Mat) -> (Mat, LayerNormCache) {
        let (gamma, beta) = (&p[self.gain.clone()], &p[self.bias.clone()]);
        let mut xhat = Mat::zeros(x.rows, x.cols);
        let mut y = Mat::zeros(x.rows, x.cols);
        let mut inv_std = Vec::with_capacity(x.rows);
        let d = x.cols as f64;
        for r in 0..x.rows {
            let xr = x.row(r);
            let mean = xr.iter().sum::<f64>() / d;
            let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for c in 0..x.cols {
                let h = (xr[c] - mean) * is;
                xhat.data[r * x.cols + c] = h;
                y.data[r * x.cols + c] = gamma[c] * h + beta[c];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, p: &[f64], cache: &LayerNormCache, dy: &Mat, g: &mut [f64]) -> Mat {
        let gamma = &p[self.gain.clone()];
        let d = dy.cols as f64;
        let mut dx = Mat::zeros(dy.rows, dy.cols);
        for r in 0..dy.rows {
            let (dyr, xh) = (dy.row(r), cache.xhat.row(r));
            for c in 0..dy.cols {
                g[self.gain.start + c] += dyr[c] * xh[c];
                g[self.bias.start + c] += dyr[c];
            }
            let dxhat: Vec<f64> = (0..dy.cols).map(|c| dyr[c] * gamma[c]).collect();
            let m1 = dxhat.iter().sum::<f64>() / d;
            let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
            for (c, v) in dx.row_mut(r).iter_mut().enumerate() {
                *v = cache.inv_std[r] * (dxhat[c] - m1 - xh[c] * m2);
            }
        }
        dx
    }
}

pub fn leaky_relu(x: &mut Mat) {
    x.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE
        }
    });
}

/// Backpropagates through a leaky ReLU given its output (sign is preserved).
pub fn leaky_relu_backward(y: &Mat, dy: &mut Mat) {
    for (d, &v) in dy.data.iter_mut().zip(&y.data) {
        if v < 0.0 {
            *d *= LEAKY_SLOPE;
        }
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 − rate)`.
pub fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

pub fn apply_mask(x: &mut [f64], mask: &[f64]) {
    for (v, m) in x.iter_mut().zip(mask) {
        *v *= m;
    }
}

/// Mean of feature columns inside each window: `features` is `maps × T'`,
/// the result is `windows × maps` (one row per word).
pub fn pool_windows(features: &Mat, windows: &[Window]) -> Result<Mat> {
    check_windows(windows, features.cols)?;
    let mut out = Mat::zeros(windows.len(), features.rows);
    for (w, &(a, b)) in windows.iter().enumerate() {
        let inv = 1.0 / (b - a) as f64;
        for f in 0..features.rows {
            out.data[w * features.rows + f] = features.row(f)[a..b].iter().sum::<f64>() * inv;
        }
    }
    Ok(out)
}

pub fn pool_windows_backward(dpooled: &Mat, windows: &[Window], dfeatures: &mut Mat) {
    for (w, &(a, b)) in windows.iter().enumerate() {
        let inv = 1.0 / (b - a) as f64;
        for f in 0..dfeatures.rows {
            let d = dpooled.get(w, f) * inv;
            dfeatures.row_mut(f)[a..b].iter_mut().for_each(|v| *v += d);
        }
    }
}

pub fn check_windows(windows: &[Window], frames: usize) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::InvalidInput("no pooling windows".into()));
    }
    for (index, &(a, b)) in windows.iter().enumerate() {
        if a >= b || b > frames {
            return Err(Error::Alignment {
                index,
                reason: format!("window [{a}, {b}) invalid for {frames} frames"),
            });
        }
    }
    Ok(())
}
