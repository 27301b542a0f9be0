//! Token-level selection rules: threshold (TDA) and top-k (token RIDA).

use crate::error::{LabError, Result};
use crate::model::{ActivationTrace, NeuronSelector};

use super::NeuronMask;

/// Indices of the `k` largest magnitudes, ties broken by lower index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Keep-mask with `true` exactly on the `k` largest `|pre_activation|`.
pub fn rida_topk_token(pre_activation: &[f64], k: usize) -> Result<Vec<bool>> {
    if k > pre_activation.len() {
        return Err(LabError::contract(
            "rida_topk_token",
            format!("k = {k} exceeds width {}", pre_activation.len()),
        ));
    }
    let mut keep = vec![false; pre_activation.len()];
    for i in top_k_indices(pre_activation, k) {
        keep[i] = true;
    }
    Ok(keep)
}

/// Keep-mask `|post| > threshold` for one token and layer.
pub fn threshold_mask(post: &[f64], threshold: f64) -> Vec<bool> {
    post.iter().map(|&a| a.abs() > threshold).collect()
}

/// Per-token TDA masks for every layer of a trace.
pub fn tda_mask(trace: &ActivationTrace, threshold: f64) -> Result<Vec<NeuronMask>> {
    if !(threshold >= 0.0) {
        return Err(LabError::contract("tda_mask", format!("threshold {threshold} must be >= 0")));
    }
    Ok((0..trace.len())
        .map(|t| NeuronMask {
            layers: trace
                .layers
                .iter()
                .map(|l| threshold_mask(l.post_activation.row(t), threshold))
                .collect(),
        })
        .collect())
}

/// Online TDA: drops neurons whose activation magnitude is at or below the threshold.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdSelector {
    pub threshold: f64,
}

impl NeuronSelector for ThresholdSelector {
    fn select(&self, _layer: usize, _token: usize, _ffn_input: &[f64], _pre: &[f64], post: &[f64]) -> Vec<bool> {
        threshold_mask(post, self.threshold)
    }
}

/// Online token-level top-k on gate pre-activation magnitudes.
#[derive(Debug, Clone, Copy)]
pub struct TopKSelector {
    pub k: usize,
}

impl NeuronSelector for TopKSelector {
    fn select(&self, _layer: usize, _token: usize, _ffn_input: &[f64], pre: &[f64], _post: &[f64]) -> Vec<bool> {
        rida_topk_token(pre, self.k.min(pre.len())).expect("k clamped to width")
    }
}
