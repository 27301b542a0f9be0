//! Versioned JSON container shared by model and router checkpoints.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numerics::Tensor2D;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor2D) -> Self {
        Self {
            name: name.into(),
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor2D> {
        Tensor2D::new(self.rows, self.cols, self.data.clone())
            .map_err(|e| LabError::Checkpoint(format!("tensor {}: {e}", self.name)))
    }
}

/// Self-describing checkpoint: a format version, a kind tag, the owning
/// component's config, and flat row-major tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(kind: &str, config: serde_json::Value, tensors: Vec<NamedTensor>) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: kind.to_string(),
            config,
            tensors,
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(LabError::Checkpoint(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        if self.kind != kind {
            return Err(LabError::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor2D> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| LabError::Checkpoint(format!("missing tensor {name}")))?
            .to_tensor()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LabError::Checkpoint(e.to_string()))
    }
}
