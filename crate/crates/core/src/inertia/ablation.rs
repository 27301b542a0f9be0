use serde::{Deserialize, Serialize};

use super::metrics::{inertia_metrics, InertiaMetrics};
use super::support::{check_threshold, estimate_h2};
use crate::error::{LabError, Result};
use crate::model::{InputMode, ToyTransformer};
use crate::numerics::{cross_entropy_index, Tensor2D, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub support_threshold: f64,
    pub q: f64,
    /// Layer whose attention and activations are analysed; defaults to the first.
    pub layer: Option<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            support_threshold: 0.1,
            q: 0.05,
            layer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// `"ablated"` or `"none"` when no position qualifies.
    pub status: String,
    pub layer: usize,
    pub support_threshold: f64,
    pub q: f64,
    pub removed_position: Option<usize>,
    pub removed_token: Option<usize>,
    pub before: InertiaMetrics,
    pub after: Option<InertiaMetrics>,
    pub jaccard_delta: Option<f64>,
    pub concentration_delta: Option<f64>,
    pub persistence_delta: Option<f64>,
    /// Perplexity over the targets that follow the removed token, with and
    /// without it in context.
    pub perplexity_before: Option<f64>,
    pub perplexity_after: Option<f64>,
    pub scored_targets: usize,
}

/// Earliest position `j` (leaving at least one later target) that belongs to
/// the heavy-hitter estimate of every causal attention row able to see it.
pub fn first_heavy_hitter(rows: &[Vector], support_threshold: f64) -> Result<Option<usize>> {
    check_threshold("first_heavy_hitter", support_threshold)?;
    let n = rows.len();
    for j in 0..n.saturating_sub(2) {
        let padded: Vec<Vec<f64>> = rows[j..]
            .iter()
            .map(|r| {
                let mut v = r.to_vec();
                v.resize(n, 0.0);
                v
            })
            .collect();
        if estimate_h2(&padded, support_threshold)?.contains(&j) {
            return Ok(Some(j));
        }
    }
    Ok(None)
}

fn target_perplexity(logits: &Tensor2D, tokens: &[usize], rows: std::ops::Range<usize>) -> f64 {
    let n = rows.len() as f64;
    let ce: f64 = rows.map(|r| cross_entropy_index(logits.row(r), tokens[r + 1])).sum();
    (ce / n).exp()
}

/// Deletes the first heavy-hitter token and reports how activation inertia
/// and the perplexity of the following tokens change.
pub fn ablate_first_heavy_hitter(model: &ToyTransformer, sequence: &[usize], config: &AblationConfig) -> Result<AblationReport> {
    if sequence.len() < 3 {
        return Err(LabError::contract("ablate_first_heavy_hitter", format!("sequence of {} tokens, need 3", sequence.len())));
    }
    let layer = config.layer.unwrap_or(0);
    let out = model.forward_with(sequence, InputMode::Sequential, crate::model::Masking::Dense)?;
    let lt = out.trace.layer(layer)?;
    let before = inertia_metrics(&out.trace, layer, config.q)?;
    let mut report = AblationReport {
        status: "none".into(),
        layer,
        support_threshold: config.support_threshold,
        q: config.q,
        removed_position: None,
        removed_token: None,
        before,
        after: None,
        jaccard_delta: None,
        concentration_delta: None,
        persistence_delta: None,
        perplexity_before: None,
        perplexity_after: None,
        scored_targets: 0,
    };
    let Some(j) = first_heavy_hitter(&lt.attention, config.support_threshold)? else {
        return Ok(report);
    };
    let mut ablated = sequence.to_vec();
    ablated.remove(j);
    let out_after = model.forward_with(&ablated, InputMode::Sequential, crate::model::Masking::Dense)?;
    let after = inertia_metrics(&out_after.trace, layer, config.q)?;
    let n = sequence.len();
    report.status = "ablated".into();
    report.removed_position = Some(j);
    report.removed_token = Some(sequence[j]);
    report.after = Some(after);
    report.jaccard_delta = Some(after.jaccard_mean - before.jaccard_mean);
    report.concentration_delta = Some(after.concentration - before.concentration);
    report.persistence_delta = Some(after.persistence - before.persistence);
    report.perplexity_before = Some(target_perplexity(&out.logits, sequence, j + 1..n - 1));
    report.perplexity_after = Some(target_perplexity(&out_after.logits, &ablated, j..n - 2));
    report.scored_targets = n - 2 - j;
    Ok(report)
}
