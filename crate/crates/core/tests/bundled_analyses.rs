use dalab::assets::{bundled_model, TRAIN_CORPUS};
use dalab::inertia::{ablate_first_heavy_hitter, AblationConfig};
use dalab::model::{tokenize, windows, FfnKind};
use dalab::moyu::importance_divergence;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

#[test]
fn dominant_token_removal_lowers_persistence() {
    let model = bundled_model(FfnKind::Relu).unwrap();
    let r = ablate_first_heavy_hitter(&model, &tokenize("7The old "), &AblationConfig::default()).unwrap();
    assert_eq!(r.status, "ablated");
    assert_eq!(r.removed_position, Some(1));
    assert_eq!(r.removed_token, Some(b'T' as usize));
    assert!(close(r.persistence_delta.unwrap(), GOLDEN_PERSISTENCE_DELTA));
    assert!(r.persistence_delta.unwrap() < 0.0);
    assert_eq!(r.scored_targets, 9 - 2 - 1);
}

#[test]
fn identical_tokens_leave_persistence_unchanged() {
    let model = bundled_model(FfnKind::Relu).unwrap();
    let r = ablate_first_heavy_hitter(&model, &[101; 12], &AblationConfig::default()).unwrap();
    assert_eq!(r.status, "ablated");
    assert_eq!(r.persistence_delta, Some(0.0));
    assert!(r.jaccard_delta.unwrap().abs() < 0.05);
}

#[test]
fn importance_divergence_on_bundled_models() {
    let relu = bundled_model(FfnKind::Relu).unwrap();
    let swiglu = bundled_model(FfnKind::Swiglu).unwrap();
    let trace = windows(&tokenize(TRAIN_CORPUS), 64, 16);
    let d = importance_divergence(&relu, &swiglu, &trace, Some(2000)).unwrap();
    assert!(close(d.relu.increment_rank_correlation, GOLDEN_RELU_CORRELATION));
    assert!(close(d.swiglu.increment_rank_correlation, GOLDEN_SWIGLU_CORRELATION));
    assert!(!d.relu_correlation_higher);
    assert_eq!(d.relu.nonzero_inactive_increments, 0);
}

#[test]
fn repeated_identical_inputs_give_unit_rank_correlation() {
    let relu = bundled_model(FfnKind::Relu).unwrap();
    let swiglu = bundled_model(FfnKind::Swiglu).unwrap();
    let corpus = vec![tokenize("ab"); 20];
    let d = importance_divergence(&relu, &swiglu, &corpus, None).unwrap();
    assert!((d.relu.increment_rank_correlation - 1.0).abs() < 1e-12);
    assert!((d.swiglu.increment_rank_correlation - 1.0).abs() < 1e-12);
    assert!(importance_divergence(&relu, &swiglu, &[], None).is_err());
}

const GOLDEN_PERSISTENCE_DELTA: f64 = -2.0 / 7.0;
const GOLDEN_RELU_CORRELATION: f64 = 0.45549031588225286;
const GOLDEN_SWIGLU_CORRELATION: f64 = 0.5686400710718414;
