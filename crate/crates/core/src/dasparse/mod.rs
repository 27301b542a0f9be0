//! Dynamic-activation strategies over FFN neurons: threshold (TDA), offline
//! router (RODA), token-level top-k (token RIDA, the routing core shared with
//! top-k MoE), and sequence-level prompt aggregation (sequence RIDA), plus
//! perplexity, density, and FLOP accounting.

mod evaluate;
mod flops;
mod mask;
mod router;
mod select;
mod sequence;

pub use evaluate::{
    calibrate_router_threshold, calibrate_tda_threshold, evaluate_strategy, masked_perplexity, perplexity,
    random_mask, random_mask_baseline, EvalConfig, MaskedEval, SparsityReport, StrategySpec,
};
pub use flops::{flop_account, flops_saved, FlopAccount};
pub use mask::NeuronMask;
pub use router::{
    classification_stats, collect_router_samples, fit_layer_router, train_roda_router, ActivityLabel,
    ClassificationStats, LayerRouter, RouterConfig, RouterModel, RouterReport, RouterSamples,
    ROUTER_CHECKPOINT_KIND,
};
pub use select::{rida_topk_token, tda_mask, threshold_mask, top_k_indices, ThresholdSelector, TopKSelector};
pub use sequence::{rida_sequence, sequence_statistic, ActivationSource, Aggregator};
