use std::ops::Range;

use super::params::{Init, ParamLayout};
use super::tensor::Mat;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Single-layer LSTM, gates ordered `i, f, g, o`, zero initial state.
#[derive(Debug, Clone)]
pub struct Lstm {
    w: Range<usize>,
    u: Range<usize>,
    b: Range<usize>,
    pub d_in: usize,
    pub hidden: usize,
}

pub struct LstmCache {
    x: Mat,
    /// Per step: activated gates `[i, f, g, o]`, each `hidden` wide.
    gates: Mat,
    c: Mat,
    pub h: Mat,
}

impl Lstm {
    pub fn new(layout: &mut ParamLayout, name: &str, d_in: usize, hidden: usize, gain: f64) -> Self {
        let bound = gain / (hidden as f64).sqrt();
        Self {
            w: layout.add(format!("{name}.w_input"), &[4 * hidden, d_in], Init::Uniform(bound)),
            u: layout.add(format!("{name}.w_hidden"), &[4 * hidden, hidden], Init::Uniform(bound)),
            b: layout.add(format!("{name}.bias"), &[4 * hidden], Init::Const(0.0)),
            d_in,
            hidden,
        }
    }

    /// Runs the sequence `x` (`steps × d_in`); every step's hidden state is
    /// kept in the cache.
    pub fn forward(&self, p: &[f64], x: &Mat) -> LstmCache {
        let hd = self.hidden;
        let (w, u, b) = (&p[self.w.clone()], &p[self.u.clone()], &p[self.b.clone()]);
        let n = x.rows;
        let mut gates = Mat::zeros(n, 4 * hd);
        let mut c = Mat::zeros(n, hd);
        let mut h = Mat::zeros(n, hd);
        let mut z = vec![0.0; 4 * hd];
        for t in 0..n {
            let xt = x.row(t);
            z.copy_from_slice(b);
            for (r, zr) in z.iter_mut().enumerate() {
                let wr = &w[r * self.d_in..(r + 1) * self.d_in];
                *zr += wr.iter().zip(xt).map(|(a, b)| a * b).sum::<f64>();
                if t > 0 {
                    let ur = &u[r * hd..(r + 1) * hd];
                    *zr += ur.iter().zip(h.row(t - 1)).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            let gt = gates.row_mut(t);
            for k in 0..hd {
                gt[k] = sigmoid(z[k]);
                gt[hd + k] = sigmoid(z[hd + k]);
                gt[2 * hd + k] = z[2 * hd + k].tanh();
                gt[3 * hd + k] = sigmoid(z[3 * hd + k]);
            }
            for k in 0..hd {
                let prev = if t > 0 { c.get(t - 1, k) } else { 0.0 };
                let g = gates.row(t);
                let ct = g[hd + k] * prev + g[k] * g[2 * hd + k];
                c.data[t * hd + k] = ct;
                h.data[t * hd + k] = g[3 * hd + k] * ct.tanh();
            }
        }
        LstmCache {
            x: x.clone(),
            gates,
            c,
            h,
        }
    }

    /// Backpropagation through time. `dh` holds the loss gradient on every
    /// step's hidden state.
    pub fn backward(&self, p: &[f64], cache: &LstmCache, dh: &Mat, g: &mut [f64], need_dx: bool) -> Option<Mat> {
        let hd = self.hidden;
        let (w, u) = (&p[self.w.clone()], &p[self.u.clone()]);
        let n = cache.x.rows;
        let mut dx = need_dx.then(|| Mat::zeros(n, self.d_in));
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dz = vec![0.0; 4 * hd];
        for t in (0..n).rev() {
            let gt = cache.gates.row(t);
            for k in 0..hd {
                let (i, f, gg, o) = (gt[k], gt[hd + k], gt[2 * hd + k], gt[3 * hd + k]);
                let ct = cache.c.get(t, k);
                let tc = ct.tanh();
                let dht = dh.get(t, k) + dh_next[k];
                let dc = dht * o * (1.0 - tc * tc) + dc_next[k];
                let prev = if t > 0 { cache.c.get(t - 1, k) } else { 0.0 };
                dz[k] = dc * gg * i * (1.0 - i);
                dz[hd + k] = dc * prev * f * (1.0 - f);
                dz[2 * hd + k] = dc * i * (1.0 - gg * gg);
                dz[3 * hd + k] = dht * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            let xt = cache.x.row(t);
            for (r, &dzr) in dz.iter().enumerate() {
                g[self.b.start + r] += dzr;
                let gw = &mut g[self.w.start + r * self.d_in..self.w.start + (r + 1) * self.d_in];
                for (gv, xv) in gw.iter_mut().zip(xt) {
                    *gv += dzr * xv;
                }
                if t > 0 {
                    let hp = cache.h.row(t - 1);
                    let gu = &mut g[self.u.start + r * hd..self.u.start + (r + 1) * hd];
                    for (gv, hv) in gu.iter_mut().zip(hp) {
                        *gv += dzr * hv;
                    }
                }
            }
            dh_next.fill(0.0);
            if t > 0 {
                for (r, &dzr) in dz.iter().enumerate() {
                    for (d, uv) in dh_next.iter_mut().zip(&u[r * hd..(r + 1) * hd]) {
                        *d += dzr * uv;
                    }
                }
            }
            if let Some(dx) = dx.as_mut() {
                let dxt = dx.row_mut(t);
                for (r, &dzr) in dz.iter().enumerate() {
                    for (d, wv) in dxt.iter_mut().zip(&w[r * self.d_in..(r + 1) * self.d_in]) {
                        *d += dzr * wv;
                    }
                }
            }
        }
        dx
    }
}
