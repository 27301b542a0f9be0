use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Per-layer keep-mask over FFN neurons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronMask {
    pub layers: Vec<Vec<bool>>,
}

impl NeuronMask {
    pub fn full(n_layers: usize, d_ff: usize) -> Self {
        Self {
            layers: vec![vec![true; d_ff]; n_layers],
        }
    }

    pub fn empty(n_layers: usize, d_ff: usize) -> Self {
        Self {
            layers: vec![vec![false; d_ff]; n_layers],
        }
    }

    pub fn check_shape(&self, n_layers: usize, d_ff: usize) -> Result<()> {
        if self.layers.len() != n_layers || self.layers.iter().any(|l| l.len() != d_ff) {
            return Err(LabError::MaskShape {
                expected_layers: n_layers,
                expected_width: d_ff,
                detail: format!(
                    "{} layers of widths {:?}",
                    self.layers.len(),
                    self.layers.iter().map(Vec::len).collect::<Vec<_>>()
                ),
            });
        }
        Ok(())
    }

    /// Fraction of kept neurons in one layer.
    pub fn layer_density(&self, layer: usize) -> f64 {
        let l = &self.layers[layer];
        if l.is_empty() {
            return 0.0;
        }
        l.iter().filter(|&&k| k).count() as f64 / l.len() as f64
    }

    /// Fraction of kept neurons over all layers.
    pub fn density(&self) -> f64 {
        let total: usize = self.layers.iter().map(Vec::len).sum();
        if total == 0 {
            return 0.0;
        }
        let kept: usize = self.layers.iter().map(|l| l.iter().filter(|&&k| k).count()).sum();
        kept as f64 / total as f64
    }
}
