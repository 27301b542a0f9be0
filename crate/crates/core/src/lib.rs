//! Desk-scale laboratory for dynamic activation sparsity.
//!
//! - [`numerics`]: dense 64-bit linear algebra, activations, cross-entropy,
//!   a finite-difference oracle, seeded random streams.
//! - [`model`]: a small causal transformer with ReLU or SwiGLU FFNs and
//!   activation tracing.
//! - [`dasparse`]: threshold, offline-router, token top-k, and
//!   sequence-aggregated neuron selection, with perplexity and FLOP
//!   accounting.
//! - [`moyu`]: numerical checks of why training pushes positive FFN
//!   activations down, and of the cumulative weight-importance recursion.
//! - [`inertia`]: heavy-hitter support analysis, activation heatmaps and
//!   inertia metrics, and the first-heavy-hitter ablation.

pub mod assets;
pub mod checkpoint;
pub mod dasparse;
pub mod error;
pub mod inertia;
pub mod model;
pub mod moyu;
pub mod numerics;

pub use error::{LabError, Result};
