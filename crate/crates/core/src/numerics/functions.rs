//! Elementwise activations, softmax / cross-entropy, and the central
//! finite-difference gradient used as the independent oracle for every
//! analytic gradient in the crate.

use super::tensor::{vecmat, Tensor2D, Vector};
use crate::error::{LabError, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x * sigmoid(x)`.
pub fn swish1_scalar(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Derivative of `x * sigmoid(x)`.
pub fn swish1_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn relu(v: &[f64]) -> Vector {
    v.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect::<Vec<_>>().into()
}

pub fn swish1(v: &[f64]) -> Vector {
    v.iter().map(|&x| swish1_scalar(x)).collect::<Vec<_>>().into()
}

/// `swish1(x·gate) ⊙ (x·up)`.
pub fn swiglu(x: &[f64], gate: &Tensor2D, up: &Tensor2D) -> Result<Vector> {
    if gate.shape() != up.shape() {
        return Err(LabError::dims(
            "swiglu",
            format!("gate {:?} vs up {:?}", gate.shape(), up.shape()),
        ));
    }
    let g = vecmat(x, gate)?;
    let u = vecmat(x, up)?;
    Ok(g.iter()
        .zip(u.iter())
        .map(|(&g, &u)| swish1_scalar(g) * u)
        .collect::<Vec<_>>()
        .into())
}

/// Max-subtracted softmax.
pub fn softmax(v: &[f64]) -> Vector {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Vector(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `log(sum(exp(v)))`, accurate when one entry dominates.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let (max, tail) = lse_parts(v);
    max + tail
}

/// Splits log-sum-exp into `(max, log1p(sum of the other exp(x - max)))`.
fn lse_parts(v: &[f64]) -> (f64, f64) {
    let (arg, max) = v
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(ai, am), (i, x)| if x > am { (i, x) } else { (ai, am) });
    let rest: f64 = v
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &x)| (x - max).exp())
        .sum();
    (max, rest.ln_1p())
}

pub fn log_softmax(v: &[f64]) -> Vector {
    let lse = log_sum_exp(v);
    v.iter().map(|&x| x - lse).collect::<Vec<_>>().into()
}

/// Checks that `y` is a probability vector (nonnegative, sums to 1 within `tol`).
pub fn check_distribution(op: &'static str, y: &[f64], tol: f64) -> Result<()> {
    if y.is_empty() {
        return Err(LabError::contract(op, "empty distribution"));
    }
    if let Some(bad) = y.iter().find(|&&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(LabError::contract(op, format!("entry {bad} is not a probability")));
    }
    let s: f64 = y.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(LabError::contract(op, format!("entries sum to {s}, not 1")));
    }
    Ok(())
}

/// `-<y, log softmax(logits)>`.
pub fn cross_entropy(logits: &[f64], y: &[f64]) -> Result<f64> {
    if logits.len() != y.len() {
        return Err(LabError::dims(
            "cross_entropy",
            format!("{} logits vs {} targets", logits.len(), y.len()),
        ));
    }
    check_distribution("cross_entropy", y, 1e-9)?;
    let (max, tail) = lse_parts(logits);
    Ok(y.iter()
        .zip(logits)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &z)| p * ((max - z) + tail))
        .sum())
}

/// Cross-entropy against a single target class.
pub fn cross_entropy_index(logits: &[f64], target: usize) -> f64 {
    let (max, tail) = lse_parts(logits);
    (max - logits[target]) + tail
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vector>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(LabError::contract("finite_diff_grad", format!("step {h} must be positive")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(Vector(grad))
}
