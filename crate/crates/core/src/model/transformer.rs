use super::layers::{LayerNorm, LayerNormCache, Linear};
use super::params::ParamLayout;
use super::tensor::Mat;

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(...)`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Mat {
    let mut pe = Mat::zeros(n, d);
    for pos in 0..n {
        for c in 0..d {
            let i = (c / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * i / d as f64);
            pe.data[pos * d + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Post-norm encoder layer: `h = LN1(x + MHA(x))`, `y = LN2(h + FFN(h))`
/// with a ReLU feed-forward block.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
    pub dim: usize,
    pub heads: usize,
}

pub struct EncoderCache {
    x: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    /// Attention weights per head, each `n × n`.
    attn: Vec<Mat>,
    concat: Mat,
    ln1: LayerNormCache,
    h1: Mat,
    ff_hidden: Mat,
    ln2: LayerNormCache,
}

impl EncoderLayer {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize, heads: usize, ffn: usize, out_gain: f64) -> Self {
        Self {
            q: Linear::new(layout, &format!("{name}.attn.q"), dim, dim, 1.0),
            k: Linear::new(layout, &format!("{name}.attn.k"), dim, dim, 1.0),
            v: Linear::new(layout, &format!("{name}.attn.v"), dim, dim, 1.0),
            o: Linear::new(layout, &format!("{name}.attn.out"), dim, dim, 1.0),
            ln1: LayerNorm::new(layout, &format!("{name}.norm1"), dim, 1.0),
            ff1: Linear::new(layout, &format!("{name}.ffn.in"), dim, ffn, 1.0),
            ff2: Linear::new(layout, &format!("{name}.ffn.out"), ffn, dim, 1.0),
            ln2: LayerNorm::new(layout, &format!("{name}.norm2"), dim, out_gain),
            dim,
            heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward(&self, p: &[f64], x: &Mat) -> (Mat, EncoderCache) {
        let n = x.rows;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.q.forward(p, x);
        let k = self.k.forward(p, x);
        let v = self.v.forward(p, x);
        let mut concat = Mat::zeros(n, self.dim);
        let mut attn = Vec::with_capacity(self.heads);
        for hh in 0..self.heads {
            let cols = hh * dh..(hh + 1) * dh;
            let mut a = Mat::zeros(n, n);
            for i in 0..n {
                let qi = &q.row(i)[cols.clone()];
                let row = a.row_mut(i);
                for j in 0..n {
                    row[j] = scale * qi.iter().zip(&k.row(j)[cols.clone()]).map(|(a, b)| a * b).sum::<f64>();
                }
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                row.iter_mut().for_each(|v| {
                    *v = (*v - m).exp();
                    s += *v;
                });
                row.iter_mut().for_each(|v| *v /= s);
            }
            for i in 0..n {
                for j in 0..n {
                    let aij = a.get(i, j);
                    let vj = &v.row(j)[cols.clone()];
                    for (c, vv) in concat.row_mut(i)[cols.clone()].iter_mut().zip(vj) {
                        *c += aij * vv;
                    }
                }
            }
            attn.push(a);
        }
        let mut res1 = self.o.forward(p, &concat);
        res1.add_assign(x);
        let (h1, ln1) = self.ln1.forward(p, &res1);
        let mut ff_hidden = self.ff1.forward(p, &h1);
        ff_hidden.data.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut res2 = self.ff2.forward(p, &ff_hidden);
        res2.add_assign(&h1);
        let (y, ln2) = self.ln2.forward(p, &res2);
        (
            y,
            EncoderCache {
                x: x.clone(),
                q,
                k,
                v,
                attn,
                concat,
                ln1,
                h1,
                ff_hidden,
                ln2,
            },
        )
    }

    pub fn backward(&self, p: &[f64], c: &EncoderCache, dy: &Mat, g: &mut [f64]) -> Mat {
        let n = c.x.rows;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let dres2 = self.ln2.backward(p, &c.ln2, dy, g);
        let mut dhid = self.ff2.backward(p, &c.ff_hidden, &dres2, g, true).unwrap();
        for (d, &h) in dhid.data.iter_mut().zip(&c.ff_hidden.data) {
            if h <= 0.0 {
                *d = 0.0;
            }
        }
        let mut dh1 = self.ff1.backward(p, &c.h1, &dhid, g, true).unwrap();
        dh1.add_assign(&dres2);

        let dres1 = self.ln1.backward(p, &c.ln1, &dh1, g);
        let dconcat = self.o.backward(p, &c.concat, &dres1, g, true).unwrap();

        let mut dq = Mat::zeros(n, self.dim);
        let mut dk = Mat::zeros(n, self.dim);
        let mut dv = Mat::zeros(n, self.dim);
        for (hh, a) in c.attn.iter().enumerate() {
            let cols = hh * dh..(hh + 1) * dh;
            for i in 0..n {
                let doi = &dconcat.row(i)[cols.clone()];
                // dA[i, j] = dO_i · V_j ; dV_j += A[i, j] dO_i
                let da: Vec<f64> = (0..n)
                    .map(|j| doi.iter().zip(&c.v.row(j)[cols.clone()]).map(|(a, b)| a * b).sum())
                    .collect();
                for j in 0..n {
                    let aij = a.get(i, j);
                    for (d, o) in dv.row_mut(j)[cols.clone()].iter_mut().zip(doi) {
                        *d += aij * o;
                    }
                }
                let dot: f64 = (0..n).map(|j| da[j] * a.get(i, j)).sum();
                for j in 0..n {
                    let ds = a.get(i, j) * (da[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for cc in cols.clone() {
                        dq.data[i * self.dim + cc] += ds * c.k.get(j, cc);
                        dk.data[j * self.dim + cc] += ds * c.q.get(i, cc);
                    }
                }
            }
        }
        let mut dx = dres1;
        dx.add_assign(&self.q.backward(p, &c.x, &dq, g, true).unwrap());
        dx.add_assign(&self.k.backward(p, &c.x, &dk, g, true).unwrap());
        dx.add_assign(&self.v.backward(p, &c.x, &dv, g, true).unwrap());
        dx
    }
}
