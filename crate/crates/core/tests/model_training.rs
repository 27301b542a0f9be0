//! Training and perplexity on the bundled corpus and checkpoints.

use dalab::assets::{bundled_model, default_model_config, held_out_split, training_stream, TRAIN_CORPUS};
use dalab::dasparse::{perplexity, EvalConfig, StrategySpec};
use dalab::model::{train_toy, FfnKind, ToyTransformer, TrainConfig};
use dalab::numerics::Rng;

fn short_run() -> TrainConfig {
    TrainConfig { steps: 40, seq_len: 32, ..TrainConfig::default() }
}

#[test]
fn zero_steps_returns_initial_weights() {
    let init = ToyTransformer::init(&default_model_config(FfnKind::Relu)).unwrap();
    let cfg = TrainConfig { steps: 0, ..TrainConfig::default() };
    let (out, log) = train_toy(&init, &[], &cfg).unwrap();
    assert!(log.is_empty());
    assert_eq!(out.to_checkpoint().to_json(), init.to_checkpoint().to_json());
}

#[test]
fn training_is_deterministic_and_lowers_held_out_loss() {
    let stream = training_stream(TRAIN_CORPUS);
    let held = held_out_split();
    for kind in [FfnKind::Relu, FfnKind::Swiglu] {
        let init = ToyTransformer::init(&default_model_config(kind)).unwrap();
        let (a, log_a) = train_toy(&init, &stream, &short_run()).unwrap();
        let (b, log_b) = train_toy(&init, &stream, &short_run()).unwrap();
        assert_eq!(log_a, log_b);
        assert_eq!(a.to_checkpoint().to_json(), b.to_checkpoint().to_json());
        let before = init.mean_loss(&held).unwrap();
        let after = a.mean_loss(&held).unwrap();
        assert!(after < before, "{kind:?}: {after} !< {before}");
    }
}

#[test]
fn invalid_training_configs_rejected() {
    let init = ToyTransformer::init(&default_model_config(FfnKind::Relu)).unwrap();
    let stream = training_stream(TRAIN_CORPUS);
    assert!(train_toy(&init, &[vec![1]], &short_run()).is_err());
    assert!(train_toy(&init, &stream, &TrainConfig { lr: 0.0, ..short_run() }).is_err());
    assert!(train_toy(&init, &stream, &TrainConfig { batch_size: 0, ..short_run() }).is_err());
}

#[test]
fn untrained_model_is_near_uniform_on_random_tokens() {
    let cfg = default_model_config(FfnKind::Relu);
    let model = ToyTransformer::init(&cfg).unwrap();
    let mut rng = Rng::new(11);
    let corpus: Vec<Vec<usize>> =
        (0..20).map(|_| (0..64).map(|_| rng.index(cfg.vocab_size)).collect()).collect();
    let ppl = perplexity(&model, &corpus, None, &EvalConfig { prompt_len: 0 }).unwrap();
    let v = cfg.vocab_size as f64;
    assert!((ppl - v).abs() < 0.05 * v, "perplexity {ppl} vs vocab {v}");
}

#[test]
fn bundled_models_beat_init_and_half_width_topk() {
    let held = held_out_split();
    let eval = EvalConfig::default();
    for (kind, golden) in [(FfnKind::Relu, 2.344), (FfnKind::Swiglu, 2.345)] {
        let model = bundled_model(kind).unwrap();
        let loss = model.mean_loss(&held).unwrap();
        assert!((loss - golden).abs() < 5e-3, "{kind:?} held-out CE {loss}");
        let init = ToyTransformer::init(&model.config).unwrap();
        assert!(loss < init.mean_loss(&held).unwrap());
        let dense = perplexity(&model, &held, None, &eval).unwrap();
        let half = StrategySpec::RidaTokenTopK { k: model.config.d_ff / 2 };
        let topk = perplexity(&model, &held, Some(&half), &eval).unwrap();
        assert!(dense <= topk, "{kind:?}: dense {dense} topk {topk}");
    }
}
