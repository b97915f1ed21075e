use rand::Rng;

use super::*;
use crate::rng::rng_for;

fn tiny(context: ContextKind) -> ModelConfig {
    ModelConfig {
        eeg_channels: 3,
        conv1_maps: 4,
        conv1_kernel: 8,
        conv2_maps: 5,
        conv2_kernel: 9,
        stride: 3,
        speech_kernel: 16,
        embed_dim: 8,
        text_dim: 6,
        text_layers: 2,
        context,
        heads: 4,
        ffn_dim: 6,
        positions: true,
        dropout: 0.2,
        context_gain: 1.0,
    }
}

fn random_mat(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Parameters with every tensor (biases and norms included) randomized so
/// no gradient is trivially zero.
fn random_params(model: &Model, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, &[99]);
    model
        .init_params(seed)
        .iter()
        .map(|v| v + rng.gen_range(-0.3..0.3))
        .collect()
}

struct Sample {
    eeg: Mat,
    env: [Vec<f64>; 2],
    windows: [Vec<Window>; 2],
    text: [Mat; 2],
}

impl Sample {
    fn new(cfg: &ModelConfig, t: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[7]);
        let n2 = t.div_ceil(3);
        let half = n2 / 2;
        Sample {
            eeg: random_mat(cfg.eeg_channels, t, &mut rng),
            env: [
                (0..t).map(|_| rng.gen_range(0.0..1.0)).collect(),
                (0..t).map(|_| rng.gen_range(0.0..1.0)).collect(),
            ],
            windows: [vec![(0, half), (half, n2)], vec![(0, half + 1), (half + 1, n2)]],
            text: [random_mat(2, cfg.text_dim, &mut rng), random_mat(3, cfg.text_dim, &mut rng)],
        }
    }

    fn input(&self) -> PairInput<'_> {
        PairInput {
            eeg: &self.eeg,
            pos: Candidate {
                envelope: &self.env[0],
                windows: &self.windows[0],
                embeddings: &self.text[0],
            },
            neg: Candidate {
                envelope: &self.env[1],
                windows: &self.windows[1],
                embeddings: &self.text[1],
            },
        }
    }
}

fn check_gradients(context: ContextKind, variant: SimVariant, lambda: f64, mode: Mode) {
    let cfg = tiny(context);
    let model = Model::new(cfg.clone()).unwrap();
    let sample = Sample::new(&cfg, 18, 3);
    let input = sample.input();
    let mut p = random_params(&model, 11);
    let mut g = vec![0.0; p.len()];
    let out = model.pair_loss(&p, &input, lambda, variant, mode, Some(&mut g)).unwrap();
    assert!(out.sim_pos > LOSS_EPS && out.sim_pos < 1.0 - LOSS_EPS);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = model.pair_loss(&p, &input, lambda, variant, mode, None).unwrap().loss;
        p[i] = orig - h;
        let down = model.pair_loss(&p, &input, lambda, variant, mode, None).unwrap().loss;
        p[i] = orig;
        let fd = (up - down) / (2.0 * h);
        // parameters with an identically zero gradient (the key bias under
        // softmax) leave only rounding noise in the numeric estimate
        let err = (fd - g[i]).abs();
        let rel = err / fd.abs().max(g[i].abs()).max(1e-7);
        if err > 1e-9 {
            worst = worst.max(rel);
        }
        assert!(
            err <= 1e-9 || rel < 1e-4,
            "{context:?} {variant:?} λ={lambda} param {i} ({}): analytic {} numeric {fd}",
            entry_name(&model, i),
            g[i]
        );
    }
    assert!(worst < 1e-4);
}

fn entry_name(model: &Model, i: usize) -> String {
    model
        .layout()
        .entries()
        .iter()
        .find(|e| e.range().contains(&i))
        .map(|e| e.name.clone())
        .unwrap_or_default()
}

#[test]
fn gradients_recurrent() {
    check_gradients(ContextKind::Recurrent, SimVariant::Convex, 0.5, Mode::Inference);
    check_gradients(ContextKind::Recurrent, SimVariant::Convex, 0.5, Mode::Train { seed: 5 });
}

#[test]
fn gradients_transformer() {
    check_gradients(ContextKind::Transformer, SimVariant::Convex, 0.5, Mode::Inference);
    check_gradients(ContextKind::Transformer, SimVariant::Blend, 0.3, Mode::Train { seed: 6 });
}

#[test]
fn gradients_other_variants() {
    check_gradients(ContextKind::Transformer, SimVariant::Power, 0.5, Mode::Inference);
    check_gradients(ContextKind::Recurrent, SimVariant::Blend, 0.7, Mode::Inference);
}

fn branch_grad_norms(model: &Model, g: &[f64]) -> (f64, f64) {
    let sum = |prefix: &str| -> f64 {
        model
            .layout()
            .ranges_with_prefix(prefix)
            .map(|r| g[r].iter().map(|v| v.abs()).sum::<f64>())
            .sum()
    };
    (sum("speech."), sum("text."))
}

#[test]
fn endpoint_lambdas_silence_a_branch() {
    for context in [ContextKind::Recurrent, ContextKind::Transformer] {
        let cfg = tiny(context);
        let model = Model::new(cfg.clone()).unwrap();
        let sample = Sample::new(&cfg, 30, 4);
        let p = random_params(&model, 2);
        for variant in [SimVariant::Convex, SimVariant::Power, SimVariant::Blend] {
            let mut g = vec![0.0; p.len()];
            model.pair_loss(&p, &sample.input(), 1.0, variant, Mode::Train { seed: 1 }, Some(&mut g)).unwrap();
            let (s, t) = branch_grad_norms(&model, &g);
            // the power rule scores at least 1 at the endpoints, where the
            // clamped loss is flat
            assert!(s > 0.0 || variant == SimVariant::Power);
            assert_eq!(t, 0.0);
            let mut g = vec![0.0; p.len()];
            model.pair_loss(&p, &sample.input(), 0.0, variant, Mode::Train { seed: 1 }, Some(&mut g)).unwrap();
            let (s, t) = branch_grad_norms(&model, &g);
            assert_eq!(s, 0.0);
            assert!(t > 0.0 || variant == SimVariant::Power);
        }
    }
}

#[test]
fn frame_grid_is_shared() {
    let model = Model::new(tiny(ContextKind::Recurrent)).unwrap();
    let p = model.init_params(0);
    assert_eq!(model.pooled_frames(300), 100);
    for t in 3..=600 {
        let env = vec![0.5; t];
        let eeg = Mat::zeros(3, t);
        let speech = model.speech_conv_output(&p, &env).unwrap();
        let n = model.pooled_frames(t);
        assert_eq!(speech.cols, n);
        let pooled = model.eeg_pooled(&p, &eeg, &[(0, n)]).unwrap();
        assert_eq!(pooled.rows, 1);
        assert!(model.eeg_pooled(&p, &eeg, &[(0, n + 1)]).is_err());
    }
}

#[test]
fn zero_inputs_give_zero_embeddings() {
    let cfg = ModelConfig::with_channels(16);
    let model = Model::new(cfg).unwrap();
    let p = model.init_params(1);
    let eeg = Mat::zeros(16, 300);
    let w = [(0, 40), (40, 100)];
    assert!(model.eeg_forward(&p, &eeg, &w).unwrap().iter().all(|&v| v == 0.0));
    assert!(model.speech_forward(&p, &[0.0; 300], &w).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn speech_conv_is_linear_before_activation() {
    let model = Model::new(ModelConfig::with_channels(4)).unwrap();
    let p = model.init_params(2);
    let mut rng = rng_for(2, &[]);
    let env: Vec<f64> = (0..120).map(|_| rng.gen_range(0.0..1.0)).collect();
    let doubled: Vec<f64> = env.iter().map(|v| 2.0 * v).collect();
    let a = model.speech_conv_output(&p, &env).unwrap();
    let b = model.speech_conv_output(&p, &doubled).unwrap();
    for (x, y) in a.data.iter().zip(&b.data) {
        assert!((2.0 * x - y).abs() < 1e-12);
    }
}

#[test]
fn swapping_isolated_words_swaps_pooled_rows() {
    let cfg = ModelConfig::with_channels(4);
    let model = Model::new(cfg).unwrap();
    let p = model.init_params(3);
    let mut rng = rng_for(3, &[1]);
    // each word is a block of content framed by 9 zero samples on both
    // sides, wider than the receptive field, with lengths divisible by 3
    let block = |len: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..4)
            .map(|_| {
                let mut row = vec![0.0; 9];
                row.extend((0..len).map(|_| rng.gen_range(-1.0..1.0)));
                row.extend(vec![0.0; 9]);
                row
            })
            .collect()
    };
    let a = block(30, &mut rng);
    let b = block(21, &mut rng);
    let join = |x: &[Vec<f64>], y: &[Vec<f64>]| -> Mat {
        let rows: Vec<Vec<f64>> = x.iter().zip(y).map(|(r1, r2)| [r1.clone(), r2.clone()].concat()).collect();
        Mat::from_rows(&rows).unwrap()
    };
    let (la, lb) = (a[0].len() / 3, b[0].len() / 3);
    let ab = join(&a, &b);
    let ba = join(&b, &a);
    let w_ab = [(0, la), (la, la + lb)];
    let w_ba = [(0, lb), (lb, la + lb)];
    let pooled_ab = model.eeg_pooled(&p, &ab, &w_ab).unwrap();
    let pooled_ba = model.eeg_pooled(&p, &ba, &w_ba).unwrap();
    for f in 0..pooled_ab.cols {
        assert!((pooled_ab.get(0, f) - pooled_ba.get(1, f)).abs() < 1e-12);
        assert!((pooled_ab.get(1, f) - pooled_ba.get(0, f)).abs() < 1e-12);
    }
    let r1 = model.eeg_forward(&p, &ab, &w_ab).unwrap();
    let r2 = model.eeg_forward(&p, &ba, &w_ba).unwrap();
    assert!(r1.iter().zip(&r2).any(|(x, y)| (x - y).abs() > 1e-9));
}

#[test]
fn text_branch_contract() {
    let cfg = ModelConfig::with_channels(4);
    let model = Model::new(cfg).unwrap();
    let p = model.init_params(4);
    let mut rng = rng_for(4, &[]);
    let one = random_mat(1, 300, &mut rng);
    let r = model.text_forward(&p, &one).unwrap();
    assert_eq!(r.len(), 32);
    assert!(r.iter().all(|v| v.is_finite()));
    let seq = random_mat(5, 300, &mut rng);
    assert_eq!(model.text_forward(&p, &seq).unwrap(), model.text_forward(&p, &seq).unwrap());
    let reversed = Mat::from_rows(&(0..5).rev().map(|i| seq.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let a = model.text_forward(&p, &seq).unwrap();
    let b = model.text_forward(&p, &reversed).unwrap();
    let linf = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(linf > 1e-6);
    assert!(model.text_forward(&p, &Mat::zeros(0, 300)).is_err());
}

#[test]
fn transformer_single_token_ignores_attention_scores() {
    let mut cfg = ModelConfig::with_channels(4);
    cfg.context = ContextKind::Transformer;
    let model = Model::new(cfg).unwrap();
    let p = model.init_params(5);
    let mut rng = rng_for(5, &[]);
    let seq = random_mat(1, 32, &mut rng);
    let base = model.context_forward(&p, Branch::Eeg, &seq).unwrap();
    // query/key weights only shape the softmax, which is 1 for one token
    let mut q = p.clone();
    for name in ["eeg.context.encoder0.attn.q.weight", "eeg.context.encoder0.attn.k.weight"] {
        let e = model.layout().find(name).unwrap();
        q[e.range()].iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
    }
    let again = model.context_forward(&q, Branch::Eeg, &seq).unwrap();
    for (a, b) in base.iter().zip(&again) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(model.context_forward(&p, Branch::Eeg, &Mat::zeros(0, 32)).is_err());
}

#[test]
fn transformer_without_positions_is_permutation_invariant() {
    let mut cfg = ModelConfig::with_channels(4);
    cfg.context = ContextKind::Transformer;
    cfg.positions = false;
    let model = Model::new(cfg.clone()).unwrap();
    let p = model.init_params(6);
    let mut rng = rng_for(6, &[]);
    let seq = random_mat(6, 32, &mut rng);
    let perm = [3, 0, 5, 1, 4, 2];
    let shuffled = Mat::from_rows(&perm.iter().map(|&i| seq.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let a = model.context_forward(&p, Branch::Speech, &seq).unwrap();
    let b = model.context_forward(&p, Branch::Speech, &shuffled).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-6);
    }
    assert_eq!(a, model.context_forward(&p, Branch::Speech, &seq).unwrap());

    cfg.positions = true;
    let with_pos = Model::new(cfg).unwrap();
    let a = with_pos.context_forward(&p, Branch::Speech, &seq).unwrap();
    let b = with_pos.context_forward(&p, Branch::Speech, &shuffled).unwrap();
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
}

#[test]
fn dropout_only_in_training() {
    let cfg = tiny(ContextKind::Recurrent);
    let model = Model::new(cfg.clone()).unwrap();
    let sample = Sample::new(&cfg, 36, 8);
    let p = random_params(&model, 8);
    let run = |mode| {
        model
            .pair_loss(&p, &sample.input(), 0.5, SimVariant::Convex, mode, None)
            .unwrap()
    };
    assert_eq!(run(Mode::Inference), run(Mode::Inference));
    assert_eq!(run(Mode::Train { seed: 1 }), run(Mode::Train { seed: 1 }));
    assert_ne!(run(Mode::Train { seed: 1 }), run(Mode::Train { seed: 2 }));
    assert_ne!(run(Mode::Train { seed: 1 }), run(Mode::Inference));
}

#[test]
fn scores_stay_in_unit_interval() {
    let cfg = tiny(ContextKind::Recurrent);
    let model = Model::new(cfg.clone()).unwrap();
    for seed in 0..20 {
        let sample = Sample::new(&cfg, 45, seed);
        let p = random_params(&model, seed);
        for variant in [SimVariant::Convex, SimVariant::Blend] {
            let out = model
                .pair_loss(&p, &sample.input(), 0.5, variant, Mode::Inference, None)
                .unwrap();
            assert!(out.sim_pos > 0.0 && out.sim_pos <= 1.0);
            assert!(out.sim_neg > 0.0 && out.sim_neg <= 1.0);
        }
    }
}

#[test]
fn shape_errors() {
    let cfg = tiny(ContextKind::Recurrent);
    let model = Model::new(cfg.clone()).unwrap();
    let p = model.init_params(0);
    let sample = Sample::new(&cfg, 18, 0);
    let mut input = sample.input();
    let wrong = Mat::zeros(2, 18);
    input.eeg = &wrong;
    assert!(matches!(
        model.pair_loss(&p, &input, 0.5, SimVariant::Convex, Mode::Inference, None),
        Err(Error::Shape(_))
    ));
    let input = sample.input();
    assert!(model.pair_loss(&p[1..], &input, 0.5, SimVariant::Convex, Mode::Inference, None).is_err());
    assert!(model.pair_loss(&p, &input, 1.5, SimVariant::Convex, Mode::Inference, None).is_err());
    let bad = ModelConfig {
        context: ContextKind::Transformer,
        heads: 5,
        ..ModelConfig::default()
    };
    assert!(Model::new(bad).is_err());
}

