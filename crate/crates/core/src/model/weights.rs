use serde::{Deserialize, Serialize};

use super::config::{FfnKind, ModelConfig};
use crate::checkpoint::{Checkpoint, NamedTensor};
use crate::error::{LabError, Result};
use crate::numerics::{Rng, Tensor2D};

/// Attention and FFN weights of one block.
///
/// `w_gate` is the θ projection, `w_up` the SwiGLU up projection (absent for
/// ReLU), and `w_down` the `d_ff x d_model` down projection whose rows are
/// the per-neuron output vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub wq: Tensor2D,
    pub wk: Tensor2D,
    pub wv: Tensor2D,
    pub wo: Tensor2D,
    pub w_gate: Tensor2D,
    pub w_up: Option<Tensor2D>,
    pub w_down: Tensor2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransformer {
    pub config: ModelConfig,
    pub tok_emb: Tensor2D,
    pub pos_emb: Tensor2D,
    pub layers: Vec<LayerWeights>,
    pub unembed: Tensor2D,
}

pub const MODEL_CHECKPOINT_KIND: &str = "toy_transformer";

impl ToyTransformer {
    /// Fresh model with every weight drawn i.i.d. from N(0, 1/d_model).
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let root = Rng::new(config.seed);
        let std = (1.0 / config.d_model as f64).sqrt();
        let (d, ff) = (config.d_model, config.d_ff);
        let draw = |label: u64, rows: usize, cols: usize| {
            Tensor2D::random_normal(rows, cols, std, &mut root.split(label))
        };
        let tok_emb = draw(1, config.vocab_size, d);
        let pos_emb = draw(2, config.max_seq, d);
        let unembed = draw(3, d, config.vocab_size);
        let layers = (0..config.n_layers as u64)
            .map(|l| {
                let base = 100 + 10 * l;
                LayerWeights {
                    wq: draw(base, d, d),
                    wk: draw(base + 1, d, d),
                    wv: draw(base + 2, d, d),
                    wo: draw(base + 3, d, d),
                    w_gate: draw(base + 4, d, ff),
                    w_up: (config.ffn_kind == FfnKind::Swiglu).then(|| draw(base + 5, d, ff)),
                    w_down: draw(base + 6, ff, d),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tok_emb,
            pos_emb,
            layers,
            unembed,
        })
    }

    /// Same architecture with every weight set to zero.
    pub(crate) fn zeros_like(&self) -> Self {
        let z = |t: &Tensor2D| Tensor2D::zeros(t.rows(), t.cols());
        Self {
            config: self.config.clone(),
            tok_emb: z(&self.tok_emb),
            pos_emb: z(&self.pos_emb),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    wq: z(&l.wq),
                    wk: z(&l.wk),
                    wv: z(&l.wv),
                    wo: z(&l.wo),
                    w_gate: z(&l.w_gate),
                    w_up: l.w_up.as_ref().map(z),
                    w_down: z(&l.w_down),
                })
                .collect(),
            unembed: z(&self.unembed),
        }
    }

    /// Every weight tensor with a stable name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor2D)> {
        let mut out = vec![
            ("tok_emb".to_string(), &self.tok_emb),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.wq"), &l.wq));
            out.push((format!("layers.{i}.wk"), &l.wk));
            out.push((format!("layers.{i}.wv"), &l.wv));
            out.push((format!("layers.{i}.wo"), &l.wo));
            out.push((format!("layers.{i}.w_gate"), &l.w_gate));
            if let Some(up) = &l.w_up {
                out.push((format!("layers.{i}.w_up"), up));
            }
            out.push((format!("layers.{i}.w_down"), &l.w_down));
        }
        out.push(("unembed".to_string(), &self.unembed));
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Tensor2D> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.push(&mut l.wq);
            out.push(&mut l.wk);
            out.push(&mut l.wv);
            out.push(&mut l.wo);
            out.push(&mut l.w_gate);
            if let Some(up) = &mut l.w_up {
                out.push(up);
            }
            out.push(&mut l.w_down);
        }
        out.push(&mut self.unembed);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.data().len()).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            MODEL_CHECKPOINT_KIND,
            serde_json::to_value(&self.config).expect("config serializes"),
            self.named_tensors()
                .into_iter()
                .map(|(name, t)| NamedTensor::from_tensor(name, t))
                .collect(),
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(MODEL_CHECKPOINT_KIND)?;
        let config: ModelConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| LabError::Checkpoint(format!("bad model config: {e}")))?;
        // Shapes come from a fresh init of the same config.
        let mut model = Self::init(&config)?.zeros_like();
        let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != ckpt.tensors.len() {
            return Err(LabError::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                ckpt.tensors.len()
            )));
        }
        for ((name, slot), stored) in names.iter().zip(model.tensors_mut()).zip(&ckpt.tensors) {
            if &stored.name != name {
                return Err(LabError::Checkpoint(format!(
                    "tensor order mismatch: expected {name}, found {}",
                    stored.name
                )));
            }
            let t = stored.to_tensor()?;
            if t.shape() != slot.shape() {
                return Err(LabError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            d_ff: 16,
            n_heads: 2,
            n_layers: 2,
            vocab_size: 11,
            ffn_kind: FfnKind::Swiglu,
            max_seq: 6,
            seed: 3,
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = ToyTransformer::init(&tiny()).unwrap();
        let b = ToyTransformer::init(&tiny()).unwrap();
        assert_eq!(a, b);
        let c = ToyTransformer::init(&ModelConfig { seed: 4, ..tiny() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn down_projection_mean_within_standard_error() {
        let cfg = ModelConfig::default();
        let m = ToyTransformer::init(&cfg).unwrap();
        let v = m.layers.last().unwrap().w_down.data();
        let n = v.len() as f64;
        assert!(n >= 1e4);
        let mean = v.iter().sum::<f64>() / n;
        let sigma = (1.0 / cfg.d_model as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn shapes_follow_config() {
        let cfg = tiny();
        let m = ToyTransformer::init(&cfg).unwrap();
        assert_eq!(m.tok_emb.shape(), (11, 8));
        assert_eq!(m.pos_emb.shape(), (6, 8));
        assert_eq!(m.layers[1].w_down.shape(), (16, 8));
        assert_eq!(m.layers[0].w_up.as_ref().unwrap().shape(), (8, 16));
        let relu = ToyTransformer::init(&cfg.with_kind(FfnKind::Relu)).unwrap();
        assert!(relu.layers[0].w_up.is_none());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = ToyTransformer::init(&tiny()).unwrap();
        let text = m.to_checkpoint().to_json();
        let back = ToyTransformer::from_checkpoint(&Checkpoint::from_json(&text).unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = ModelConfig { n_heads: 3, ..tiny() };
        assert!(ToyTransformer::init(&bad).is_err());
    }
}
