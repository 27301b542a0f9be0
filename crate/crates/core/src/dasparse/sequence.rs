//! Sequence-level selection: one static mask per layer derived from the
//! prompt's aggregated activation magnitudes, reused for every later token.

use serde::{Deserialize, Serialize};

use super::select::top_k_indices;
use super::NeuronMask;
use crate::error::{LabError, Result};
use crate::model::ActivationTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    SumOfMagnitudes,
    MaxOfMagnitudes,
    L2,
}

/// Which recorded value the sequence statistic is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationSource {
    Pre,
    #[default]
    Post,
}

impl Aggregator {
    pub fn aggregate(self, values: impl Iterator<Item = f64>) -> f64 {
        match self {
            Aggregator::SumOfMagnitudes => values.map(f64::abs).sum(),
            Aggregator::MaxOfMagnitudes => values.map(f64::abs).fold(0.0, f64::max),
            Aggregator::L2 => values.map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

/// Per-neuron aggregate statistic of one layer over all prompt tokens.
pub fn sequence_statistic(trace: &ActivationTrace, layer: usize, aggregator: Aggregator, source: ActivationSource) -> Result<Vec<f64>> {
    let lt = trace.layer(layer)?;
    let m = match source {
        ActivationSource::Pre => &lt.pre_activation,
        ActivationSource::Post => &lt.post_activation,
    };
    Ok((0..m.cols())
        .map(|j| aggregator.aggregate((0..m.rows()).map(|t| m.get(t, j))))
        .collect())
}

/// Static per-layer mask keeping the `k` neurons with the largest prompt
/// statistic (ties to the lower index).
pub fn rida_sequence(
    prompt_trace: &ActivationTrace,
    k: usize,
    aggregator: Aggregator,
    source: ActivationSource,
) -> Result<NeuronMask> {
    if prompt_trace.is_empty() {
        return Err(LabError::Empty("prompt trace"));
    }
    let layers = (0..prompt_trace.n_layers())
        .map(|l| {
            let stat = sequence_statistic(prompt_trace, l, aggregator, source)?;
            if k > stat.len() {
                return Err(LabError::contract("rida_sequence", format!("k = {k} exceeds width {}", stat.len())));
            }
            let mut keep = vec![false; stat.len()];
            for i in top_k_indices(&stat, k) {
                keep[i] = true;
            }
            Ok(keep)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NeuronMask { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InputMode, ModelConfig, ToyTransformer};

    fn trace() -> ActivationTrace {
        let cfg = ModelConfig { d_model: 8, d_ff: 16, n_heads: 2, vocab_size: 32, max_seq: 16, ..ModelConfig::default() };
        let m = ToyTransformer::init(&cfg).unwrap();
        m.forward(&[3, 1, 4, 1, 5, 9], InputMode::Sequential, None).unwrap().1
    }

    #[test]
    fn aggregators() {
        let v = [3.0, -4.0, 0.0];
        assert_eq!(Aggregator::SumOfMagnitudes.aggregate(v.into_iter()), 7.0);
        assert_eq!(Aggregator::MaxOfMagnitudes.aggregate(v.into_iter()), 4.0);
        assert_eq!(Aggregator::L2.aggregate(v.into_iter()), 5.0);
    }

    #[test]
    fn statistic_matches_column_sums() {
        let t = trace();
        let stat = sequence_statistic(&t, 1, Aggregator::SumOfMagnitudes, ActivationSource::Pre).unwrap();
        let pre = &t.layers[1].pre_activation;
        for (j, s) in stat.iter().enumerate() {
            let direct: f64 = (0..pre.rows()).map(|r| pre.get(r, j).abs()).sum();
            assert!((s - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_keeps_exactly_k() {
        let t = trace();
        for k in [0, 1, 7, 16] {
            let mask = rida_sequence(&t, k, Aggregator::L2, ActivationSource::Post).unwrap();
            assert!(mask.layers.iter().all(|l| l.iter().filter(|&&b| b).count() == k));
        }
        assert!(rida_sequence(&t, 17, Aggregator::L2, ActivationSource::Post).is_err());
    }

    #[test]
    fn kept_neurons_dominate_dropped() {
        let t = trace();
        let mask = rida_sequence(&t, 5, Aggregator::MaxOfMagnitudes, ActivationSource::Post).unwrap();
        for l in 0..t.n_layers() {
            let stat = sequence_statistic(&t, l, Aggregator::MaxOfMagnitudes, ActivationSource::Post).unwrap();
            let min_kept = (0..16).filter(|&i| mask.layers[l][i]).map(|i| stat[i]).fold(f64::INFINITY, f64::min);
            let max_dropped = (0..16).filter(|&i| !mask.layers[l][i]).map(|i| stat[i]).fold(f64::NEG_INFINITY, f64::max);
            assert!(min_kept >= max_dropped);
        }
    }
}
