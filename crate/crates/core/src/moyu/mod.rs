//! Numerical checks of the over-activation theory: the expected sign of the
//! cross-entropy gradient with respect to a positive activation (and how
//! ReLU and SwiGLU compare), the linearised per-token loss and its gradient,
//! and the history-dependent weight-importance recursion.

mod importance;
mod montecarlo;
mod network;

pub use importance::{
    gradient_sum, importance_divergence, importance_increment, importance_update, loss_grad_wrt_dtheta, pearson,
    simplified_loss, spearman, track_importance, GradientSum, ImportanceDivergence, ImportanceState, ImportanceTrack,
};
pub use montecarlo::{compare_estimates, expected_grad_sign, McConfig, MCEstimate, OrderingCheck, SignCall, SIGN_SIGMAS};
pub use network::{grad_wrt_p, Eq1Network};
