//! Small causal transformer with a ReLU or SwiGLU FFN, full activation
//! tracing, mask-aware forward passes, and a plain SGD training loop.
//!
//! Each block is pre-norm (RMS norm without gain): causal multi-head
//! attention, then the FFN `down(σ(gate(h)))`, both added to the residual
//! stream. Positions are learned absolute embeddings.

mod config;
mod forward;
mod tokenize;
mod train;
mod weights;

pub use config::{FfnKind, ModelConfig};
pub use forward::{
    down_project, ActivationTrace, ForwardOutput, InputMode, LayerTrace, Masking, NeuronSelector,
};
pub use tokenize::{chunk, detokenize, tokenize, tokenize_bytes, windows};
pub use train::{sample_batch, train_toy, DownProjectionGrad, TrainConfig, TrainStep};
pub use weights::{LayerWeights, ToyTransformer, MODEL_CHECKPOINT_KIND};
