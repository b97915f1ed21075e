use rand::Rng;

use super::*;
use crate::model::{Mat, ModelConfig};
use crate::pairs::PreparedStimulus;

fn small() -> ModelConfig {
    ModelConfig {
        eeg_channels: 3,
        conv1_maps: 4,
        conv2_maps: 6,
        embed_dim: 8,
        text_dim: 5,
        ffn_dim: 8,
        ..ModelConfig::default()
    }
}

fn stimulus(id: String, t: usize, rng: &mut impl Rng) -> PreparedStimulus {
    let n2 = t.div_ceil(3);
    let words = 4;
    let levels: Vec<f64> = (0..words).map(|_| rng.gen_range(-1.0..1.0)).collect();
    PreparedStimulus {
        id,
        envelope: (0..t).map(|i| levels[i * words / t]).collect(),
        windows: (0..words).map(|k| (k * n2 / words, (k + 1) * n2 / words)).collect(),
        embeddings: Mat::from_vec(words, 5, (0..words * 5).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
    }
}

/// `n` pairs over `trials` trials whose EEG is a noisy copy of the matched
/// envelope on every channel.
fn pairs(n: usize, trials: usize, seed: u64) -> Vec<PreparedPair> {
    let mut rng = rng_for(seed, &[]);
    (0..n)
        .map(|i| {
            let t = 96;
            let pos = stimulus(format!("s{i}"), t, &mut rng);
            let neg = stimulus(format!("n{i}"), t, &mut rng);
            let eeg: Vec<f64> = (0..3)
                .flat_map(|_| pos.envelope.iter().map(|v| v + 0.3 * rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
                .collect();
            PreparedPair {
                id: format!("p{i}"),
                subject: "s".into(),
                trial: format!("t{}", i % trials),
                eeg: Mat::from_vec(3, t, eeg).unwrap(),
                pos,
                neg,
            }
        })
        .collect()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn lambda_policy_round_trips() {
    for s in ["sampled", "fixed=1", "fixed=0.25"] {
        assert_eq!(s.parse::<LambdaPolicy>().unwrap().to_string(), s);
    }
    assert!("fixed=1.5".parse::<LambdaPolicy>().is_err());
    assert!("always".parse::<LambdaPolicy>().is_err());
}

#[test]
fn defaults_follow_the_training_recipe() {
    let c = TrainConfig::default();
    assert_eq!((c.batch_size, c.learning_rate, c.weight_decay), (32, 0.001, 0.0001));
    c.validate().unwrap();
    assert!(TrainConfig { batch_size: 0, ..c.clone() }.validate().is_err());
    assert!(TrainConfig { lambda: LambdaPolicy::Fixed(2.0), ..c }.validate().is_err());
}

#[test]
fn endpoint_lambdas_leave_one_branch_without_gradient() {
    let model = Model::new(small()).unwrap();
    let params = model.init_params(1);
    let data = pairs(6, 3, 0);
    for (lambda, silent, active) in [(1.0, "text.", "speech."), (0.0, "speech.", "text.")] {
        let batch: Vec<(&PreparedPair, f64, u64)> = data.iter().map(|p| (p, lambda, 3)).collect();
        let mut grad = vec![0.0; params.len()];
        batch_gradient(&model, &params, &batch, SimVariant::Convex, 1, &mut grad).unwrap();
        let silent_grads: Vec<f64> = model.layout().ranges_with_prefix(silent).flat_map(|r| grad[r].to_vec()).collect();
        assert!(!silent_grads.is_empty());
        assert!(silent_grads.iter().all(|&g| g == 0.0), "λ={lambda}");
        assert!(model.layout().ranges_with_prefix(active).any(|r| grad[r].iter().any(|&g| g != 0.0)));
    }
}

#[test]
fn fixed_lambda_one_never_moves_text_weights() {
    let model = Model::new(small()).unwrap();
    let init = model.init_params(1);
    let data = pairs(16, 4, 1);
    let cfg = TrainConfig {
        lambda: LambdaPolicy::Fixed(1.0),
        weight_decay: 0.0,
        ..config(2)
    };
    let out = train_fold(&model, init.clone(), 0, &data, &[], &cfg).unwrap();
    for r in model.layout().ranges_with_prefix("text.") {
        assert_eq!(out.params[r.clone()], init[r]);
    }
}

#[test]
fn training_is_deterministic_and_thread_count_free() {
    let model = Model::new(small()).unwrap();
    let data = pairs(64, 8, 2);
    let (train, val) = data.split_at(56);
    let a = train_fold(&model, model.init_params(0), 0, train, val, &config(2)).unwrap();
    let b = train_fold(&model, model.init_params(0), 0, train, val, &config(2)).unwrap();
    assert_eq!(a, b);
    let c = train_fold(&model, model.init_params(0), 0, train, val, &TrainConfig { jobs: 3, ..config(2) }).unwrap();
    assert_eq!(a.history, c.history);
    assert!(a.params.iter().zip(&c.params).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a.history.len(), 4);
    let mut buf = Vec::new();
    write_history(&mut buf, &a.history).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 4);
    let first: HistoryEntry = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first, a.history[0]);
}

#[test]
fn held_out_trials_never_reach_a_batch() {
    let model = Model::new(small()).unwrap();
    let data = pairs(40, 10, 3);
    let test_trials = ["t2", "t7"];
    let (test, train): (Vec<PreparedPair>, Vec<PreparedPair>) =
        data.into_iter().partition(|p| test_trials.contains(&p.trial.as_str()));
    let out = train_fold(&model, model.init_params(0), 1, &train, &[], &config(1)).unwrap();
    assert!(!test.is_empty());
    assert!(out.trained_on.iter().all(|(_, t)| !test_trials.contains(&t.as_str())));
    assert_eq!(out.trained_on.len(), 8);
}

#[test]
fn learns_an_easy_task() {
    let model = Model::new(small()).unwrap();
    let data = pairs(96, 12, 4);
    let (train, test) = data.split_at(72);
    let cfg = TrainConfig {
        lambda: LambdaPolicy::Fixed(1.0),
        learning_rate: 0.01,
        ..config(30)
    };
    let before = predict(&model, &model.init_params(0), test, 1.0, cfg.sim, 0, 1).unwrap();
    let out = train_fold(&model, model.init_params(0), 0, train, &[], &cfg).unwrap();
    let after = predict(&model, &out.params, test, 1.0, cfg.sim, 0, 1).unwrap();
    let acc = crate::stats::mm_accuracy(&after).unwrap();
    assert!(acc >= 80.0, "accuracy {acc} (before {})", crate::stats::mm_accuracy(&before).unwrap());
    let first = out.history.first().unwrap().loss;
    let last = out.history.last().unwrap().loss;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn early_stopping_keeps_the_best_epoch() {
    let model = Model::new(small()).unwrap();
    let data = pairs(48, 8, 5);
    let (train, val) = data.split_at(40);
    let cfg = TrainConfig { patience: 1, ..config(30) };
    let out = train_fold(&model, model.init_params(0), 0, train, val, &cfg).unwrap();
    let vals: Vec<&HistoryEntry> = out.history.iter().filter(|h| h.split == "val").collect();
    let best = vals.iter().min_by(|a, b| a.loss.total_cmp(&b.loss)).unwrap();
    assert_eq!(best.epoch, out.best_epoch);
    let last = vals.last().unwrap().epoch;
    assert!(last == 29 || last == out.best_epoch + 1);
}

#[test]
fn divergence_names_the_fold() {
    let model = Model::new(small()).unwrap();
    let data = pairs(8, 2, 6);
    let mut init = model.init_params(0);
    init[0] = f64::NAN;
    match train_fold(&model, init, 4, &data, &[], &config(1)) {
        Err(Error::Divergence { fold, epoch, .. }) => assert_eq!((fold, epoch), (4, 0)),
        other => panic!("expected divergence, got {other:?}"),
    }
}
