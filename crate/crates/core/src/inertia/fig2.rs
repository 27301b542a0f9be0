use serde::{Deserialize, Serialize};

use super::heatmap::{activation_heatmap, Normalization};
use super::metrics::{inertia_metrics, InertiaMetrics};
use crate::error::{LabError, Result};
use crate::model::{InputMode, ToyTransformer};
use crate::numerics::Tensor2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fig2Config {
    pub q: f64,
    /// Defaults to the first layer, where a parallel-mode token sees only itself.
    pub layer: Option<usize>,
    pub normalization: Normalization,
    /// Marks the ordering checks as informational (e.g. for an untrained model).
    pub informational: bool,
}

impl Default for Fig2Config {
    fn default() -> Self {
        Self {
            q: 0.05,
            layer: None,
            normalization: Normalization::PerTokenMax,
            informational: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Sentence,
    Random,
}

impl CorpusKind {
    pub fn name(self) -> &'static str {
        match self {
            CorpusKind::Sentence => "sentence",
            CorpusKind::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Cell {
    pub corpus: CorpusKind,
    pub mode: InputMode,
    pub metrics: InertiaMetrics,
}

impl Fig2Cell {
    pub fn label(&self) -> String {
        format!("{}_{}", self.corpus.name(), self.mode.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fig2Orderings {
    pub sentence_sequential_jaccard_higher: bool,
    pub random_sequential_jaccard_higher: bool,
    pub random_sequential_more_concentrated: bool,
    pub parallel_concentration_gap: f64,
    pub sequential_concentration_gap: f64,
    pub parallel_gap_smaller: bool,
    pub all_hold: bool,
    pub informational: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Report {
    pub layer: usize,
    pub q: f64,
    pub normalization: Normalization,
    /// Fixed order: sentence/parallel, sentence/sequential, random/parallel, random/sequential.
    pub cells: Vec<Fig2Cell>,
    pub orderings: Fig2Orderings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig2Output {
    pub report: Fig2Report,
    /// Same order as `report.cells`.
    pub heatmaps: Vec<Tensor2D>,
}

const CELLS: [(CorpusKind, InputMode); 4] = [
    (CorpusKind::Sentence, InputMode::Parallel),
    (CorpusKind::Sentence, InputMode::Sequential),
    (CorpusKind::Random, InputMode::Parallel),
    (CorpusKind::Random, InputMode::Sequential),
];

/// Activation patterns of a coherent sentence and of random words, each fed
/// token-by-token in isolation (parallel) and as one causal sequence.
pub fn fig2_experiment(
    model: &ToyTransformer,
    sentence: &[usize],
    random_words: &[usize],
    config: &Fig2Config,
) -> Result<Fig2Output> {
    if sentence.is_empty() || random_words.is_empty() {
        return Err(LabError::Empty("fig2 corpus"));
    }
    let layer = config.layer.unwrap_or(0);
    if layer >= model.config.n_layers {
        return Err(LabError::contract("fig2_experiment", format!("layer {layer} of {}", model.config.n_layers)));
    }
    let run = |corpus: CorpusKind, mode: InputMode| -> Result<(Fig2Cell, Tensor2D)> {
        let tokens = match corpus {
            CorpusKind::Sentence => sentence,
            CorpusKind::Random => random_words,
        };
        let (_, trace) = model.forward(tokens, mode, None)?;
        Ok((
            Fig2Cell {
                corpus,
                mode,
                metrics: inertia_metrics(&trace, layer, config.q)?,
            },
            activation_heatmap(&trace, layer, config.normalization)?,
        ))
    };
    let results: Vec<Result<(Fig2Cell, Tensor2D)>> = std::thread::scope(|s| {
        let handles: Vec<_> = CELLS.iter().map(|&(c, m)| s.spawn(move || run(c, m))).collect();
        handles.into_iter().map(|h| h.join().expect("fig2 cell thread panicked")).collect()
    });
    let (cells, heatmaps): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let m = |i: usize| cells[i].metrics;
    let parallel_gap = (m(0).concentration - m(2).concentration).abs();
    let sequential_gap = (m(3).concentration - m(1).concentration).abs();
    let a_sentence = m(1).jaccard_mean > m(0).jaccard_mean;
    let a_random = m(3).jaccard_mean > m(2).jaccard_mean;
    let b = m(3).concentration > m(1).concentration;
    let c = parallel_gap < sequential_gap;
    Ok(Fig2Output {
        report: Fig2Report {
            layer,
            q: config.q,
            normalization: config.normalization,
            orderings: Fig2Orderings {
                sentence_sequential_jaccard_higher: a_sentence,
                random_sequential_jaccard_higher: a_random,
                random_sequential_more_concentrated: b,
                parallel_concentration_gap: parallel_gap,
                sequential_concentration_gap: sequential_gap,
                parallel_gap_smaller: c,
                all_hold: a_sentence && a_random && b && c,
                informational: config.informational,
            },
            cells,
        },
        heatmaps,
    })
}
