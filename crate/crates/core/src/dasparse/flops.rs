use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::ModelConfig;

/// Multiply-accumulate accounting for one token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopAccount {
    /// Fraction of FFN multiply-accumulates skipped under the mask.
    pub ffn_saved_fraction: f64,
    pub ffn_macs_dense: usize,
    /// Attention multiply-accumulates, not affected by FFN masks.
    pub attention_macs: usize,
}

/// Fraction of FFN multiply-accumulates skipped: one minus the mean layer
/// density, weighted by each layer's FFN cost.
pub fn flops_saved(layer_density: &[f64], config: &ModelConfig) -> Result<f64> {
    if layer_density.len() != config.n_layers {
        return Err(LabError::dims(
            "flops_saved",
            format!("{} densities for {} layers", layer_density.len(), config.n_layers),
        ));
    }
    if let Some(d) = layer_density.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(LabError::contract("flops_saved", format!("density {d} outside [0, 1]")));
    }
    // Every block has the same FFN shape; the weights stay explicit so the
    // accounting extends to heterogeneous stacks.
    let weights = vec![config.ffn_macs_per_token() as f64; config.n_layers];
    let total: f64 = weights.iter().sum();
    let kept: f64 = weights.iter().zip(layer_density).map(|(w, d)| w * d).sum();
    Ok((1.0 - kept / total).clamp(0.0, 1.0))
}

pub fn flop_account(layer_density: &[f64], config: &ModelConfig, context: usize) -> Result<FlopAccount> {
    Ok(FlopAccount {
        ffn_saved_fraction: flops_saved(layer_density, config)?,
        ffn_macs_dense: config.ffn_macs_per_token() * config.n_layers,
        attention_macs: config.attention_macs_per_token(context) * config.n_layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_in_density() {
        let cfg = ModelConfig::default();
        assert_eq!(flops_saved(&[1.0, 1.0], &cfg).unwrap(), 0.0);
        assert_eq!(flops_saved(&[0.0, 0.0], &cfg).unwrap(), 1.0);
        assert_eq!(flops_saved(&[0.25, 0.25], &cfg).unwrap(), 0.75);
        assert!((flops_saved(&[0.0, 0.5], &cfg).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = ModelConfig::default();
        assert!(flops_saved(&[1.2, 0.0], &cfg).is_err());
        assert!(flops_saved(&[0.5], &cfg).is_err());
    }
}
