//! The three-branch match/mismatch network.
//!
//! ```text
//! EEG  C×T ─ conv(k=8) ─ conv(16×9, stride 3) ─┐
//!                                              ├ word pooling ─ context ─ R_e
//! envelope 1×T ─ conv(k=16, stride 3) ─────────┘ word pooling ─ context ─ R_s
//! word vectors n×300 ─ context ─ context ─────────────────────────────── R_t
//! ```
//!
//! All weights live in one flat `Vec<f64>` described by a [`ParamLayout`];
//! gradients use the same layout. Backpropagation is written out by hand for
//! each layer.

mod checkpoint;
mod layers;
mod lstm;
mod params;
mod similarity;
mod tensor;
mod transformer;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{check_windows, pool_windows, LEAKY_SLOPE};
pub use params::{Init, ParamEntry, ParamLayout};
pub use similarity::{
    check_lambda, fuse, fuse_with_grad, mm_loss, mm_loss_grad, similarity, Fused, SimVariant, LOSS_EPS,
};
pub use tensor::Mat;
pub use transformer::sinusoidal_positions;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::stimulus::Window;
use layers::{
    apply_mask, dropout_mask, leaky_relu, leaky_relu_backward, pool_windows_backward, Conv, Linear,
};
use lstm::{Lstm, LstmCache};
use transformer::{EncoderCache, EncoderLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextKind {
    Recurrent,
    Transformer,
}

impl std::str::FromStr for ContextKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recurrent" | "lstm" => Ok(ContextKind::Recurrent),
            "transformer" => Ok(ContextKind::Transformer),
            _ => Err(Error::Config(format!("unknown context kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub eeg_channels: usize,
    pub conv1_maps: usize,
    pub conv1_kernel: usize,
    pub conv2_maps: usize,
    pub conv2_kernel: usize,
    pub stride: usize,
    pub speech_kernel: usize,
    pub embed_dim: usize,
    pub text_dim: usize,
    pub text_layers: usize,
    pub context: ContextKind,
    pub heads: usize,
    pub ffn_dim: usize,
    pub positions: bool,
    pub dropout: f64,
    /// Scale of the context layers' initial weights (LSTM) or of the final
    /// layer-norm gain (transformer). Small values keep the initial
    /// embeddings close together, so initial similarities sit near the
    /// middle of `(0, 1]`.
    pub context_gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            eeg_channels: 128,
            conv1_maps: 16,
            conv1_kernel: 8,
            conv2_maps: 32,
            conv2_kernel: 9,
            stride: 3,
            speech_kernel: 16,
            embed_dim: 32,
            text_dim: 300,
            text_layers: 2,
            context: ContextKind::Recurrent,
            heads: 4,
            ffn_dim: 64,
            positions: true,
            dropout: 0.2,
            context_gain: 0.25,
        }
    }
}

impl ModelConfig {
    pub fn with_channels(channels: usize) -> Self {
        Self {
            eeg_channels: channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("eeg_channels", self.eeg_channels),
            ("conv1_maps", self.conv1_maps),
            ("conv1_kernel", self.conv1_kernel),
            ("conv2_maps", self.conv2_maps),
            ("conv2_kernel", self.conv2_kernel),
            ("stride", self.stride),
            ("speech_kernel", self.speech_kernel),
            ("embed_dim", self.embed_dim),
            ("text_dim", self.text_dim),
            ("text_layers", self.text_layers),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be positive")));
        }
        if self.context == ContextKind::Transformer && self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.context_gain.is_finite() && self.context_gain > 0.0) {
            return Err(Error::Config("context_gain must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Context {
    Recurrent(Vec<Lstm>),
    Attention {
        proj: Option<Linear>,
        layers: Vec<EncoderLayer>,
        positions: bool,
    },
}

enum ContextCache {
    Recurrent(Vec<LstmCache>),
    Attention {
        input: Mat,
        layers: Vec<EncoderCache>,
        n: usize,
    },
}

impl Context {
    fn new(layout: &mut ParamLayout, name: &str, d_in: usize, depth: usize, cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        match cfg.context {
            ContextKind::Recurrent => Context::Recurrent(
                (0..depth)
                    .map(|l| {
                        let input = if l == 0 { d_in } else { d };
                        Lstm::new(layout, &format!("{name}.lstm{l}"), input, d, cfg.context_gain)
                    })
                    .collect(),
            ),
            ContextKind::Transformer => Context::Attention {
                proj: (d_in != d).then(|| Linear::new(layout, &format!("{name}.proj"), d_in, d, 1.0)),
                layers: (0..depth)
                    .map(|l| {
                        let gain = if l + 1 == depth { cfg.context_gain } else { 1.0 };
                        EncoderLayer::new(layout, &format!("{name}.encoder{l}"), d, cfg.heads, cfg.ffn_dim, gain)
                    })
                    .collect(),
                positions: cfg.positions,
            },
        }
    }

    fn forward(&self, p: &[f64], x: &Mat) -> (Vec<f64>, ContextCache) {
        match self {
            Context::Recurrent(layers) => {
                let mut caches: Vec<LstmCache> = Vec::with_capacity(layers.len());
                for (l, layer) in layers.iter().enumerate() {
                    let input = if l == 0 { x } else { &caches[l - 1].h };
                    let c = layer.forward(p, input);
                    caches.push(c);
                }
                let top = &caches.last().unwrap().h;
                (top.row(top.rows - 1).to_vec(), ContextCache::Recurrent(caches))
            }
            Context::Attention { proj, layers, positions } => {
                let mut z = match proj {
                    Some(l) => l.forward(p, x),
                    None => x.clone(),
                };
                if *positions {
                    z.add_assign(&sinusoidal_positions(z.rows, z.cols));
                }
                let mut caches = Vec::with_capacity(layers.len());
                for layer in layers {
                    let (y, c) = layer.forward(p, &z);
                    caches.push(c);
                    z = y;
                }
                let n = z.rows;
                let mut out = vec![0.0; z.cols];
                for r in 0..n {
                    for (o, v) in out.iter_mut().zip(z.row(r)) {
                        *o += v / n as f64;
                    }
                }
                (
                    out,
                    ContextCache::Attention {
                        input: x.clone(),
                        layers: caches,
                        n,
                    },
                )
            }
        }
    }

    fn backward(&self, p: &[f64], cache: &ContextCache, dout: &[f64], g: &mut [f64], need_dx: bool) -> Option<Mat> {
        match (self, cache) {
            (Context::Recurrent(layers), ContextCache::Recurrent(caches)) => {
                let top = &caches.last().unwrap().h;
                let mut dh = Mat::zeros(top.rows, top.cols);
                dh.row_mut(top.rows - 1).copy_from_slice(dout);
                for l in (0..layers.len()).rev() {
                    dh = layers[l].backward(p, &caches[l], &dh, g, need_dx || l > 0)?;
                }
                Some(dh)
            }
            (Context::Attention { proj, layers, .. }, ContextCache::Attention { input, layers: caches, n }) => {
                let d = dout.len();
                let mut dz = Mat::zeros(*n, d);
                for r in 0..*n {
                    for (v, o) in dz.row_mut(r).iter_mut().zip(dout) {
                        *v = o / *n as f64;
                    }
                }
                for (layer, c) in layers.iter().zip(caches).rev() {
                    dz = layer.backward(p, c, &dz, g);
                }
                match proj {
                    Some(l) => l.backward(p, input, &dz, g, need_dx),
                    None => need_dx.then_some(dz),
                }
            }
            _ => unreachable!("context cache does not match its layer"),
        }
    }
}

/// Dropout masks for one training sample.
struct Masks {
    conv1: Vec<f64>,
    conv2: Vec<f64>,
    speech: [Vec<f64>; 2],
    embed: Vec<f64>,
}

struct EegFeatures {
    x: Mat,
    y1: Mat,
    y1d: Mat,
    y2: Mat,
    out: Mat,
}

struct SpeechFeatures {
    x: Mat,
    y: Mat,
    out: Mat,
}

/// Inputs describing one candidate stimulus.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub envelope: &'a [f64],
    /// Pooling windows on the stride-3 grid, shared by the EEG and speech
    /// branches for this candidate.
    pub windows: &'a [Window],
    pub embeddings: &'a Mat,
}

#[derive(Debug, Clone, Copy)]
pub struct PairInput<'a> {
    /// `channels × T` at 64 Hz.
    pub eeg: &'a Mat,
    pub pos: Candidate<'a>,
    pub neg: Candidate<'a>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Inference,
    /// Dropout active, masks drawn from a stream derived from `seed`.
    Train { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOutput {
    pub loss: f64,
    pub sim_pos: f64,
    pub sim_neg: f64,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layout: ParamLayout,
    conv1: Conv,
    conv2: Conv,
    eeg_context: Context,
    speech_conv: Conv,
    speech_context: Context,
    text_context: Context,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut layout = ParamLayout::default();
        let conv1 = Conv::new(&mut layout, "eeg.conv1", c.eeg_channels, c.conv1_maps, c.conv1_kernel, 1, 1.0);
        let conv2 = Conv::new(&mut layout, "eeg.conv2", c.conv1_maps, c.conv2_maps, c.conv2_kernel, c.stride, 1.0);
        let eeg_context = Context::new(&mut layout, "eeg.context", c.conv2_maps, 1, c);
        let speech_conv = Conv::new(&mut layout, "speech.conv", 1, c.conv2_maps, c.speech_kernel, c.stride, 1.0);
        let speech_context = Context::new(&mut layout, "speech.context", c.conv2_maps, 1, c);
        let text_context = Context::new(&mut layout, "text.context", c.text_dim, c.text_layers, c);
        Ok(Self {
            config,
            layout,
            conv1,
            conv2,
            eeg_context,
            speech_conv,
            speech_context,
            text_context,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        self.layout.initialize(seed)
    }

    /// Frames on the pooling grid for a `t`-sample input.
    pub fn pooled_frames(&self, t: usize) -> usize {
        self.conv2.out_len(t)
    }

    fn check_params(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.layout.len() {
            return Err(Error::Shape(format!(
                "{} parameters for a model with {}",
                p.len(),
                self.layout.len()
            )));
        }
        Ok(())
    }

    fn check_eeg(&self, eeg: &Mat) -> Result<()> {
        if eeg.rows != self.config.eeg_channels {
            return Err(Error::Shape(format!(
                "EEG has {} channels, model expects {}",
                eeg.rows, self.config.eeg_channels
            )));
        }
        if eeg.cols == 0 {
            return Err(Error::InvalidInput("empty EEG segment".into()));
        }
        Ok(())
    }

    fn check_text(&self, emb: &Mat) -> Result<()> {
        if emb.rows == 0 {
            return Err(Error::InvalidInput("text branch needs at least one word".into()));
        }
        if emb.cols != self.config.text_dim {
            return Err(Error::Shape(format!(
                "word vectors have {} values, model expects {}",
                emb.cols, self.config.text_dim
            )));
        }
        Ok(())
    }

    fn eeg_features(&self, p: &[f64], eeg: &Mat, masks: Option<&Masks>) -> EegFeatures {
        let mut y1 = self.conv1.forward(p, eeg);
        leaky_relu(&mut y1);
        let mut y1d = y1.clone();
        if let Some(m) = masks {
            apply_mask(&mut y1d.data, &m.conv1);
        }
        let mut y2 = self.conv2.forward(p, &y1d);
        leaky_relu(&mut y2);
        let mut out = y2.clone();
        if let Some(m) = masks {
            apply_mask(&mut out.data, &m.conv2);
        }
        EegFeatures {
            x: eeg.clone(),
            y1,
            y1d,
            y2,
            out,
        }
    }

    fn eeg_features_backward(&self, p: &[f64], f: &EegFeatures, mut dout: Mat, masks: Option<&Masks>, g: &mut [f64]) {
        if let Some(m) = masks {
            apply_mask(&mut dout.data, &m.conv2);
        }
        leaky_relu_backward(&f.y2, &mut dout);
        let mut dy1 = self.conv2.backward(p, &f.y1d, &dout, g, true).unwrap();
        if let Some(m) = masks {
            apply_mask(&mut dy1.data, &m.conv1);
        }
        leaky_relu_backward(&f.y1, &mut dy1);
        self.conv1.backward(p, &f.x, &dy1, g, false);
    }

    fn speech_features(&self, p: &[f64], envelope: &[f64], mask: Option<&[f64]>) -> SpeechFeatures {
        let x = Mat {
            rows: 1,
            cols: envelope.len(),
            data: envelope.to_vec(),
        };
        let mut y = self.speech_conv.forward(p, &x);
        leaky_relu(&mut y);
        let mut out = y.clone();
        if let Some(m) = mask {
            apply_mask(&mut out.data, m);
        }
        SpeechFeatures { x, y, out }
    }

    fn speech_features_backward(&self, p: &[f64], f: &SpeechFeatures, mut dout: Mat, mask: Option<&[f64]>, g: &mut [f64]) {
        if let Some(m) = mask {
            apply_mask(&mut dout.data, m);
        }
        leaky_relu_backward(&f.y, &mut dout);
        self.speech_conv.backward(p, &f.x, &dout, g, false);
    }

    /// Pre-activation output of the speech convolution (`maps × ceil(T/3)`).
    pub fn speech_conv_output(&self, p: &[f64], envelope: &[f64]) -> Result<Mat> {
        self.check_params(p)?;
        let x = Mat::from_vec(1, envelope.len(), envelope.to_vec())?;
        Ok(self.speech_conv.forward(p, &x))
    }

    /// Word-pooled EEG features (`words × maps`), inference mode.
    pub fn eeg_pooled(&self, p: &[f64], eeg: &Mat, windows: &[Window]) -> Result<Mat> {
        self.check_params(p)?;
        self.check_eeg(eeg)?;
        let f = self.eeg_features(p, eeg, None);
        pool_windows(&f.out, windows)
    }

    /// `R_e` in inference mode.
    pub fn eeg_forward(&self, p: &[f64], eeg: &Mat, windows: &[Window]) -> Result<Vec<f64>> {
        let pooled = self.eeg_pooled(p, eeg, windows)?;
        Ok(self.eeg_context.forward(p, &pooled).0)
    }

    /// `R_s` in inference mode.
    pub fn speech_forward(&self, p: &[f64], envelope: &[f64], windows: &[Window]) -> Result<Vec<f64>> {
        self.check_params(p)?;
        if envelope.is_empty() {
            return Err(Error::InvalidInput("empty envelope".into()));
        }
        let f = self.speech_features(p, envelope, None);
        let pooled = pool_windows(&f.out, windows)?;
        Ok(self.speech_context.forward(p, &pooled).0)
    }

    /// `R_t` in inference mode.
    pub fn text_forward(&self, p: &[f64], embeddings: &Mat) -> Result<Vec<f64>> {
        self.check_params(p)?;
        self.check_text(embeddings)?;
        Ok(self.text_context.forward(p, embeddings).0)
    }

    /// Runs the context layer of one branch on an arbitrary word sequence.
    pub fn context_forward(&self, p: &[f64], branch: Branch, seq: &Mat) -> Result<Vec<f64>> {
        self.check_params(p)?;
        if seq.rows == 0 {
            return Err(Error::InvalidInput("context layer needs at least one step".into()));
        }
        let (ctx, d_in) = match branch {
            Branch::Eeg => (&self.eeg_context, self.config.conv2_maps),
            Branch::Speech => (&self.speech_context, self.config.conv2_maps),
            Branch::Text => (&self.text_context, self.config.text_dim),
        };
        if seq.cols != d_in {
            return Err(Error::Shape(format!("sequence width {} != {d_in}", seq.cols)));
        }
        Ok(ctx.forward(p, seq).0)
    }

    fn draw_masks(&self, seed: u64, t: usize) -> Masks {
        let mut rng = rng_for(seed, &[0xd0]);
        let c = &self.config;
        let t2 = self.conv2.out_len(t);
        Masks {
            conv1: dropout_mask(c.conv1_maps * t, c.dropout, &mut rng),
            conv2: dropout_mask(c.conv2_maps * t2, c.dropout, &mut rng),
            speech: [
                dropout_mask(c.conv2_maps * t2, c.dropout, &mut rng),
                dropout_mask(c.conv2_maps * t2, c.dropout, &mut rng),
            ],
            embed: dropout_mask(c.embed_dim, c.dropout, &mut rng),
        }
    }

    /// Loss and similarities for one `(E, S⁺, S⁻)` triple. When `grad` is
    /// given, the parameter gradient of the loss is added to it.
    ///
    /// Each candidate pools the EEG features with its own windows, so both
    /// candidates are treated identically. In training mode one embedding
    /// dropout mask is shared by every branch of the sample.
    pub fn pair_loss(
        &self,
        p: &[f64],
        input: &PairInput,
        lambda: f64,
        variant: SimVariant,
        mode: Mode,
        grad: Option<&mut [f64]>,
    ) -> Result<PairOutput> {
        self.check_params(p)?;
        check_lambda(lambda)?;
        self.check_eeg(input.eeg)?;
        let t = input.eeg.cols;
        let n2 = self.conv2.out_len(t);
        let (need_s, need_t) = variant.uses(lambda);
        for c in [&input.pos, &input.neg] {
            check_windows(c.windows, n2)?;
            if need_s && c.envelope.len() != t {
                return Err(Error::Shape(format!(
                    "envelope has {} frames, EEG has {t}",
                    c.envelope.len()
                )));
            }
            if need_t {
                self.check_text(c.embeddings)?;
            }
        }
        if let Some(g) = grad.as_ref() {
            if g.len() != p.len() {
                return Err(Error::Shape("gradient buffer length".into()));
            }
        }
        let masks = match mode {
            Mode::Inference => None,
            Mode::Train { seed } => Some(self.draw_masks(seed, t)),
        };
        let embed_mask = masks.as_ref().map(|m| m.embed.as_slice());
        let masked = |mut v: Vec<f64>| {
            if let Some(m) = embed_mask {
                apply_mask(&mut v, m);
            }
            v
        };

        let eeg_feat = self.eeg_features(p, input.eeg, masks.as_ref());

        struct Side {
            e_cache: ContextCache,
            r_e: Vec<f64>,
            speech: Option<(SpeechFeatures, ContextCache, Vec<f64>)>,
            text: Option<(ContextCache, Vec<f64>)>,
            fused: Fused,
        }
        let mut sides = Vec::with_capacity(2);
        for (k, c) in [&input.pos, &input.neg].into_iter().enumerate() {
            let pooled = pool_windows(&eeg_feat.out, c.windows)?;
            let (r_e, e_cache) = self.eeg_context.forward(p, &pooled);
            let r_e = masked(r_e);
            let speech = need_s.then(|| {
                let mask = masks.as_ref().map(|m| m.speech[k].as_slice());
                let f = self.speech_features(p, c.envelope, mask);
                let pooled = pool_windows(&f.out, c.windows).expect("windows checked above");
                let (r, cache) = self.speech_context.forward(p, &pooled);
                (f, cache, masked(r))
            });
            let text = need_t.then(|| {
                let (r, cache) = self.text_context.forward(p, c.embeddings);
                (cache, masked(r))
            });
            let fused = fuse_with_grad(
                variant,
                speech.as_ref().map(|s| s.2.as_slice()),
                text.as_ref().map(|t| t.1.as_slice()),
                &r_e,
                lambda,
            )?;
            sides.push(Side {
                e_cache,
                r_e,
                speech,
                text,
                fused,
            });
        }
        let (sim_pos, sim_neg) = (sides[0].fused.score, sides[1].fused.score);
        let loss = mm_loss(sim_pos, sim_neg);

        if let Some(g) = grad {
            let (dp, dn) = mm_loss_grad(sim_pos, sim_neg);
            let mut d_eeg_feat = Mat::zeros(eeg_feat.out.rows, eeg_feat.out.cols);
            for (k, (side, c, dl)) in [(&sides[0], &input.pos, dp), (&sides[1], &input.neg, dn)].into_iter().enumerate() {
                let scaled = |d: &[f64]| -> Vec<f64> {
                    let mut v: Vec<f64> = d.iter().map(|x| x * dl).collect();
                    if let Some(m) = embed_mask {
                        apply_mask(&mut v, m);
                    }
                    v
                };
                debug_assert_eq!(side.r_e.len(), self.config.embed_dim);
                let d_re = scaled(&side.fused.d_eeg);
                let d_pooled = self.eeg_context.backward(p, &side.e_cache, &d_re, g, true).unwrap();
                pool_windows_backward(&d_pooled, c.windows, &mut d_eeg_feat);

                if let (Some((f, cache, _)), Some(d)) = (&side.speech, &side.fused.d_speech) {
                    let d_rs = scaled(d);
                    let d_pooled = self.speech_context.backward(p, cache, &d_rs, g, true).unwrap();
                    let mut d_feat = Mat::zeros(f.out.rows, f.out.cols);
                    pool_windows_backward(&d_pooled, c.windows, &mut d_feat);
                    let mask = masks.as_ref().map(|m| m.speech[k].as_slice());
                    self.speech_features_backward(p, f, d_feat, mask, g);
                }
                if let (Some((cache, _)), Some(d)) = (&side.text, &side.fused.d_text) {
                    let d_rt = scaled(d);
                    self.text_context.backward(p, cache, &d_rt, g, false);
                }
            }
            self.eeg_features_backward(p, &eeg_feat, d_eeg_feat, masks.as_ref(), g);
        }
        Ok(PairOutput { loss, sim_pos, sim_neg })
    }

    /// Inference-mode fused similarity between an EEG segment and one
    /// candidate stimulus.
    pub fn score(&self, p: &[f64], eeg: &Mat, candidate: &Candidate, lambda: f64, variant: SimVariant) -> Result<f64> {
        let input = PairInput {
            eeg,
            pos: *candidate,
            neg: *candidate,
        };
        Ok(self.pair_loss(p, &input, lambda, variant, Mode::Inference, None)?.sim_pos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Eeg,
    Speech,
    Text,
}

#[cfg(test)]
mod tests;
