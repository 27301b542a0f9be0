//! Masked perplexity, strategy evaluation, and threshold calibration.

use serde::{Deserialize, Serialize};

use super::flops::flop_account;
use super::router::RouterModel;
use super::select::{ThresholdSelector, TopKSelector};
use super::sequence::{rida_sequence, ActivationSource, Aggregator};
use super::NeuronMask;
use crate::error::{LabError, Result};
use crate::model::{InputMode, Masking, ToyTransformer};
use crate::numerics::{cross_entropy_index, Rng};

/// A dynamic-activation strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategySpec {
    Dense,
    /// Keep neurons with `|post| > threshold`.
    Tda { threshold: f64 },
    /// Keep neurons the offline router scores above its decision threshold.
    Roda { router: RouterModel },
    /// Keep the `k` largest `|pre|` per token.
    RidaTokenTopK { k: usize },
    /// Keep the `k` neurons with the largest prompt statistic for every
    /// token after the prompt.
    RidaSequence {
        k: usize,
        aggregator: Aggregator,
        source: ActivationSource,
    },
}

impl StrategySpec {
    pub fn name(&self) -> String {
        match self {
            StrategySpec::Dense => "dense".into(),
            StrategySpec::Tda { threshold } => format!("tda(threshold={threshold:.6})"),
            StrategySpec::Roda { router } => format!("roda(decision={:.6})", router.decision_threshold),
            StrategySpec::RidaTokenTopK { k } => format!("rida_token_topk(k={k})"),
            StrategySpec::RidaSequence { k, aggregator, source } => {
                let agg = serde_json::to_value(aggregator).expect("aggregator serializes");
                let src = serde_json::to_value(source).expect("source serializes");
                format!("rida_sequence(k={k},{},{})", agg.as_str().unwrap_or(""), src.as_str().unwrap_or(""))
            }
        }
    }

    pub fn validate(&self, d_ff: usize) -> Result<()> {
        match self {
            StrategySpec::Tda { threshold } if !(*threshold >= 0.0) => {
                Err(LabError::contract("StrategySpec", format!("threshold {threshold} must be >= 0")))
            }
            StrategySpec::RidaTokenTopK { k } | StrategySpec::RidaSequence { k, .. } if *k > d_ff => {
                Err(LabError::contract("StrategySpec", format!("k = {k} exceeds d_ff {d_ff}")))
            }
            _ => Ok(()),
        }
    }
}

/// Evaluation layout: each sequence's first `prompt_len` tokens are the
/// prompt; predictions made at later positions are scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub prompt_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { prompt_len: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub strategy: String,
    pub layer_density: Vec<f64>,
    pub overall_density: f64,
    pub flop_saved_fraction: f64,
    pub ffn_macs_dense_per_token: usize,
    pub attention_macs_per_token: usize,
    pub perplexity_dense: f64,
    pub perplexity_sparse: f64,
}

/// Aggregate of one masked pass over a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedEval {
    pub perplexity: f64,
    pub mean_ce: f64,
    pub predictions: usize,
    pub layer_density: Vec<f64>,
}

fn scored_sequences<'a>(corpus: &'a [Vec<usize>], eval: &EvalConfig) -> Result<Vec<&'a Vec<usize>>> {
    if corpus.is_empty() {
        return Err(LabError::Empty("evaluation corpus"));
    }
    let seqs: Vec<&Vec<usize>> = corpus.iter().filter(|s| s.len() >= eval.prompt_len + 2).collect();
    if seqs.is_empty() {
        return Err(LabError::Empty("no sequence longer than the prompt plus one prediction"));
    }
    Ok(seqs)
}

/// Runs every sequence under the masking produced by `masking_for` and
/// accumulates scored cross-entropy and kept-neuron counts.
fn masked_eval<'m, F>(model: &ToyTransformer, corpus: &[Vec<usize>], eval: &EvalConfig, mut masking_for: F) -> Result<MaskedEval>
where
    F: FnMut(&[usize]) -> Result<MaskPlan<'m>>,
{
    let cfg = &model.config;
    let mut ce = 0.0;
    let mut predictions = 0usize;
    let mut kept = vec![0usize; cfg.n_layers];
    let mut positions = 0usize;
    for seq in scored_sequences(corpus, eval)? {
        let plan = masking_for(seq)?;
        let out = model.forward_with(seq, InputMode::Sequential, plan.masking())?;
        let v = cfg.vocab_size;
        for t in eval.prompt_len..seq.len() - 1 {
            ce += cross_entropy_index(&out.logits.data()[t * v..(t + 1) * v], seq[t + 1]);
            predictions += 1;
        }
        for t in eval.prompt_len..seq.len() {
            positions += 1;
            for (l, k) in kept.iter_mut().enumerate() {
                *k += out.trace.layers[l].kept[t];
            }
        }
    }
    let mean_ce = ce / predictions as f64;
    Ok(MaskedEval {
        perplexity: mean_ce.exp(),
        mean_ce,
        predictions,
        layer_density: kept.iter().map(|&k| k as f64 / (positions * cfg.d_ff) as f64).collect(),
    })
}

enum MaskPlan<'a> {
    Borrowed(Masking<'a>),
    StaticFrom(NeuronMask, usize),
}

impl MaskPlan<'_> {
    fn masking(&self) -> Masking<'_> {
        match self {
            MaskPlan::Borrowed(m) => *m,
            MaskPlan::StaticFrom(mask, start) => Masking::StaticFrom { mask, start: *start },
        }
    }
}

/// Teacher-forced perplexity and measured density under a strategy.
pub fn masked_perplexity(
    model: &ToyTransformer,
    corpus: &[Vec<usize>],
    strategy: &StrategySpec,
    eval: &EvalConfig,
) -> Result<MaskedEval> {
    strategy.validate(model.config.d_ff)?;
    match strategy {
        StrategySpec::Dense => masked_eval(model, corpus, eval, |_| Ok(MaskPlan::Borrowed(Masking::Dense))),
        StrategySpec::Tda { threshold } => {
            let sel = ThresholdSelector { threshold: *threshold };
            masked_eval(model, corpus, eval, |_| Ok(MaskPlan::Borrowed(Masking::Dynamic(&sel))))
        }
        StrategySpec::Roda { router } => {
            if router.layers.len() != model.config.n_layers {
                return Err(LabError::dims("masked_perplexity", "router layer count differs from model"));
            }
            masked_eval(model, corpus, eval, |_| Ok(MaskPlan::Borrowed(Masking::Dynamic(router))))
        }
        StrategySpec::RidaTokenTopK { k } => {
            let sel = TopKSelector { k: *k };
            masked_eval(model, corpus, eval, |_| Ok(MaskPlan::Borrowed(Masking::Dynamic(&sel))))
        }
        StrategySpec::RidaSequence { k, aggregator, source } => {
            if eval.prompt_len == 0 {
                return Err(LabError::contract("masked_perplexity", "sequence-level selection needs a prompt"));
            }
            masked_eval(model, corpus, eval, |seq| {
                let (_, prompt_trace) = model.forward(&seq[..eval.prompt_len], InputMode::Sequential, None)?;
                let mask = rida_sequence(&prompt_trace, *k, *aggregator, *source)?;
                Ok(MaskPlan::StaticFrom(mask, eval.prompt_len))
            })
        }
    }
}

/// `exp(mean next-token CE)` over the scored positions; with a strategy,
/// masks are produced and applied per that strategy.
pub fn perplexity(
    model: &ToyTransformer,
    corpus: &[Vec<usize>],
    strategy: Option<&StrategySpec>,
    eval: &EvalConfig,
) -> Result<f64> {
    Ok(masked_perplexity(model, corpus, strategy.unwrap_or(&StrategySpec::Dense), eval)?.perplexity)
}

pub fn evaluate_strategy(
    model: &ToyTransformer,
    corpus: &[Vec<usize>],
    spec: &StrategySpec,
    eval: &EvalConfig,
) -> Result<SparsityReport> {
    let dense = masked_perplexity(model, corpus, &StrategySpec::Dense, eval)?;
    let sparse = masked_perplexity(model, corpus, spec, eval)?;
    let flops = flop_account(&sparse.layer_density, &model.config, eval.prompt_len + 1)?;
    let overall_density = sparse.layer_density.iter().sum::<f64>() / sparse.layer_density.len() as f64;
    Ok(SparsityReport {
        strategy: spec.name(),
        layer_density: sparse.layer_density,
        overall_density,
        flop_saved_fraction: flops.ffn_saved_fraction,
        ffn_macs_dense_per_token: flops.ffn_macs_dense,
        attention_macs_per_token: flops.attention_macs,
        perplexity_dense: dense.perplexity,
        perplexity_sparse: sparse.perplexity,
    })
}

/// Per-layer mask with exactly `k` uniformly chosen neurons kept.
pub fn random_mask(n_layers: usize, d_ff: usize, k: usize, rng: &mut Rng) -> NeuronMask {
    NeuronMask {
        layers: (0..n_layers)
            .map(|_| {
                let mut idx: Vec<usize> = (0..d_ff).collect();
                rng.shuffle(&mut idx);
                let mut keep = vec![false; d_ff];
                for &i in &idx[..k] {
                    keep[i] = true;
                }
                keep
            })
            .collect(),
    }
}

/// Perplexities under `n_masks` random static masks of `k` neurons per
/// layer, applied after the prompt exactly like sequence-level selection.
pub fn random_mask_baseline(
    model: &ToyTransformer,
    corpus: &[Vec<usize>],
    k: usize,
    n_masks: usize,
    seed: u64,
    eval: &EvalConfig,
) -> Result<Vec<f64>> {
    let cfg = &model.config;
    if k > cfg.d_ff {
        return Err(LabError::contract("random_mask_baseline", format!("k = {k} exceeds d_ff")));
    }
    let root = Rng::new(seed);
    (0..n_masks)
        .map(|i| {
            let mask = random_mask(cfg.n_layers, cfg.d_ff, k, &mut root.split(i as u64));
            Ok(masked_eval(model, corpus, eval, |_| Ok(MaskPlan::StaticFrom(mask.clone(), eval.prompt_len)))?.perplexity)
        })
        .collect()
}

/// Lower `q`-quantile (nearest rank) of a sample; `q` in [0, 1].
pub(crate) fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let idx = ((values.len() as f64 - 1.0) * q).round() as usize;
    values[idx.min(values.len() - 1)]
}

/// TDA threshold at which roughly `density` of dense activations survive.
pub fn calibrate_tda_threshold(model: &ToyTransformer, corpus: &[Vec<usize>], density: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&density) {
        return Err(LabError::contract("calibrate_tda_threshold", format!("density {density}")));
    }
    let mut mags = Vec::new();
    for seq in corpus {
        let (_, trace) = model.forward(seq, InputMode::Sequential, None)?;
        for l in &trace.layers {
            mags.extend(l.post_activation.data().iter().map(|a| a.abs()));
        }
    }
    if mags.is_empty() {
        return Err(LabError::Empty("calibration corpus"));
    }
    Ok(quantile(&mut mags, 1.0 - density).max(0.0))
}

/// Router decision threshold at which roughly `density` of scores pass.
pub fn calibrate_router_threshold(
    model: &ToyTransformer,
    router: &RouterModel,
    corpus: &[Vec<usize>],
    density: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&density) {
        return Err(LabError::contract("calibrate_router_threshold", format!("density {density}")));
    }
    let mut scores = Vec::new();
    for seq in corpus {
        let (_, trace) = model.forward(seq, InputMode::Sequential, None)?;
        for (l, lt) in trace.layers.iter().enumerate() {
            for t in 0..trace.len() {
                scores.extend(router.layers[l].scores(lt.ffn_input.row(t)));
            }
        }
    }
    if scores.is_empty() {
        return Err(LabError::Empty("calibration corpus"));
    }
    Ok(quantile(&mut scores, 1.0 - density))
}
