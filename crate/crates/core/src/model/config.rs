use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// FFN activation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FfnKind {
    Relu,
    Swiglu,
}

impl FfnKind {
    pub fn name(self) -> &'static str {
        match self {
            FfnKind::Relu => "relu",
            FfnKind::Swiglu => "swiglu",
        }
    }

    /// Number of `d_model x d_ff` projections in one FFN block.
    pub fn ffn_projections(self) -> usize {
        match self {
            FfnKind::Relu => 2,
            FfnKind::Swiglu => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub vocab_size: usize,
    pub ffn_kind: FfnKind,
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_ff: 256,
            n_heads: 4,
            n_layers: 2,
            vocab_size: 256,
            ffn_kind: FfnKind::Relu,
            max_seq: 128,
            seed: 0x5EED,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(LabError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(LabError::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_ff < self.d_model {
            return Err(LabError::InvalidConfig(format!(
                "d_ff {} smaller than d_model {}",
                self.d_ff, self.d_model
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn with_kind(&self, ffn_kind: FfnKind) -> Self {
        Self {
            ffn_kind,
            ..self.clone()
        }
    }

    /// Multiply-accumulates of one FFN block for one token.
    pub fn ffn_macs_per_token(&self) -> usize {
        self.ffn_kind.ffn_projections() * self.d_model * self.d_ff
    }

    /// Multiply-accumulates of one attention block for one token attending
    /// over `context` positions (projections plus score and mixing terms).
    pub fn attention_macs_per_token(&self, context: usize) -> usize {
        4 * self.d_model * self.d_model + 2 * context * self.d_model
    }
}
