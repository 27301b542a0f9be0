use serde::{Deserialize, Serialize};

use super::network::{grad_at, Eq1Network};
use crate::error::{LabError, Result};
use crate::model::FfnKind;
use crate::numerics::{Rng, Tensor2D, Vector};

/// Standard errors required for a sign call.
pub const SIGN_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignCall {
    Positive,
    Negative,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub sign: SignCall,
}

impl MCEstimate {
    pub fn from_samples(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(LabError::contract("MCEstimate", format!("{n} samples, need at least 2")));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let stderr = (var / n as f64).sqrt();
        let sign = if mean > SIGN_SIGMAS * stderr {
            SignCall::Positive
        } else if mean < -SIGN_SIGMAS * stderr {
            SignCall::Negative
        } else {
            SignCall::Inconclusive
        };
        Ok(Self { mean, stderr, n, sign })
    }
}

/// `a.mean - b.mean` against the combined standard error of both estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub difference: f64,
    pub combined_stderr: f64,
    pub pass: bool,
}

pub fn compare_estimates(a: &MCEstimate, b: &MCEstimate) -> OrderingCheck {
    let difference = a.mean - b.mean;
    let combined_stderr = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
    OrderingCheck {
        difference,
        combined_stderr,
        pass: difference > SIGN_SIGMAS * combined_stderr,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub d_in: usize,
    pub d_ff: usize,
    pub d_out: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub i_star: usize,
    /// Standard deviation of the zero-mean Gaussian entries of `V`.
    pub v_std: f64,
    /// Redraw `x`, `y`, `θ`, `τ` for every sample instead of fixing them once.
    pub resample_inputs: bool,
    pub workers: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            d_in: 16,
            d_ff: 64,
            d_out: 32,
            n_samples: 100_000,
            seed: 0x3C0DE,
            i_star: 0,
            v_std: 1.0,
            resample_inputs: false,
            workers: 1,
        }
    }
}

const INPUT_STREAM: u64 = 1 << 40;
const V_STREAM: u64 = 2 << 40;

/// Inputs with `x ∈ (0, 1)` and `θ, τ ∈ [0, 1/d_in)`, so every pre-activation
/// is positive and `x τ < 1`; this keeps the SwiGLU activation strictly
/// below the ReLU one. The same draws serve both activation kinds.
fn draw_inputs(config: &McConfig, rng: &mut Rng) -> (Vector, Tensor2D, Tensor2D, Vector) {
    let (d_in, d_ff) = (config.d_in, config.d_ff);
    let x = Vector((0..d_in).map(|_| 1e-3 + (1.0 - 2e-3) * rng.uniform()).collect());
    let mut nonneg = || {
        Tensor2D::new(d_in, d_ff, (0..d_in * d_ff).map(|_| rng.uniform() / d_in as f64).collect())
            .expect("sized by construction")
    };
    let theta = nonneg();
    let up = nonneg();
    let raw: Vec<f64> = (0..config.d_out).map(|_| 0.05 + rng.uniform()).collect();
    let total: f64 = raw.iter().sum();
    (x, theta, up, Vector(raw.iter().map(|r| r / total).collect()))
}

fn network(kind: FfnKind, inputs: &(Vector, Tensor2D, Tensor2D, Vector), v: Tensor2D) -> Eq1Network {
    let (x, theta, up, y) = inputs;
    Eq1Network {
        v,
        sigma_kind: kind,
        theta: theta.clone(),
        up: (kind == FfnKind::Swiglu).then(|| up.clone()),
        x: x.clone(),
        y: y.clone(),
    }
}

fn sample_value(kind: FfnKind, config: &McConfig, root: &Rng, fixed: &Option<(Vector, Tensor2D, Tensor2D, Vector)>, s: usize) -> f64 {
    let drawn;
    let inputs = match fixed {
        Some(f) => f,
        None => {
            drawn = draw_inputs(config, &mut root.split(INPUT_STREAM + s as u64));
            &drawn
        }
    };
    let v = Tensor2D::random_normal(config.d_out, config.d_ff, config.v_std, &mut root.split(V_STREAM + s as u64));
    let net = network(kind, inputs, v);
    let a = net.activation().expect("shapes fixed by config");
    grad_at(&net, &a, config.i_star)
}

/// Monte Carlo estimate of `E_V[∂ CE / ∂ a_{i*}]` over fresh zero-mean `V`.
/// Sample `s` depends only on `(seed, s)`, and the reduction runs in sample
/// order, so the result does not depend on `workers`.
pub fn expected_grad_sign(kind: FfnKind, config: &McConfig) -> Result<MCEstimate> {
    if config.n_samples < 100 {
        return Err(LabError::contract("expected_grad_sign", format!("n_samples {} < 100", config.n_samples)));
    }
    if config.d_in == 0 || config.d_ff == 0 || config.d_out == 0 || config.i_star >= config.d_ff || !(config.v_std > 0.0) {
        return Err(LabError::InvalidConfig(format!(
            "dims {}x{}x{}, i* {}, v_std {}",
            config.d_in, config.d_ff, config.d_out, config.i_star, config.v_std
        )));
    }
    let root = Rng::new(config.seed);
    let fixed = (!config.resample_inputs).then(|| draw_inputs(config, &mut root.split(INPUT_STREAM - 1)));
    let workers = config.workers.clamp(1, config.n_samples);
    let chunk = config.n_samples.div_ceil(workers);
    let values: Vec<f64> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (root, fixed) = (&root, &fixed);
                scope.spawn(move || {
                    let end = ((w + 1) * chunk).min(config.n_samples);
                    (w * chunk..end).map(|s| sample_value(kind, config, root, fixed, s)).collect::<Vec<f64>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("sampling worker panicked")).collect()
    });
    MCEstimate::from_samples(&values)
}
