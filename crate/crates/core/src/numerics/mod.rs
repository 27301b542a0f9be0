//! Deterministic dense numerics: matrices, activations, softmax and
//! cross-entropy, a finite-difference oracle, and seeded random streams.

mod functions;
mod rng;
mod tensor;

pub use functions::{
    check_distribution, cross_entropy, cross_entropy_index, finite_diff_grad, log_softmax,
    log_sum_exp, relu, sigmoid, softmax, swiglu, swish1, swish1_derivative, swish1_scalar,
};
pub(crate) use functions::softmax_in_place;
pub use rng::{Rng, RNG_ALGORITHM};
pub use tensor::{dot, matmul, vecmat, Tensor2D, Vector};
pub(crate) use tensor::{matmul_into, vecmat_into};
