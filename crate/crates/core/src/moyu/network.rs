use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::FfnKind;
use crate::numerics::{check_distribution, cross_entropy, softmax, swish1_scalar, vecmat, Rng, Tensor2D, Vector};

/// Output layer over a single FFN activation: `f(x) = V σ(p(x))`, with
/// `p = x θ` and, for SwiGLU, `σ = swish(x θ) ⊙ (x τ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eq1Network {
    /// `d_out × d_ff`; column `i` is `v_i`.
    pub v: Tensor2D,
    pub sigma_kind: FfnKind,
    /// `d_in × d_ff`.
    pub theta: Tensor2D,
    /// `d_in × d_ff`; used only by SwiGLU.
    pub up: Option<Tensor2D>,
    pub x: Vector,
    pub y: Vector,
}

impl Eq1Network {
    pub fn validate(&self) -> Result<()> {
        let (d_out, d_ff) = self.v.shape();
        if self.theta.shape() != (self.x.len(), d_ff) {
            return Err(LabError::dims("Eq1Network", format!("theta {:?} for x {} and d_ff {d_ff}", self.theta.shape(), self.x.len())));
        }
        if self.y.len() != d_out {
            return Err(LabError::dims("Eq1Network", format!("y of {} for d_out {d_out}", self.y.len())));
        }
        check_distribution("Eq1Network", &self.y, 1e-9)?;
        match (self.sigma_kind, &self.up) {
            (FfnKind::Swiglu, Some(up)) if up.shape() == self.theta.shape() => Ok(()),
            (FfnKind::Swiglu, _) => Err(LabError::dims("Eq1Network", "SwiGLU needs an up matrix shaped like theta")),
            (FfnKind::Relu, _) => Ok(()),
        }
    }

    /// Random instance with nonnegative `θ`, `τ` in `[0, 1/d_in)`, positive
    /// `x`, a strictly positive target `y`, and standard normal `V`.
    pub fn random(kind: FfnKind, d_in: usize, d_ff: usize, d_out: usize, rng: &mut Rng) -> Eq1Network {
        let nonneg = |r: usize, c: usize, rng: &mut Rng| {
            Tensor2D::new(r, c, (0..r * c).map(|_| rng.uniform() / d_in as f64).collect()).expect("sized by construction")
        };
        let theta = nonneg(d_in, d_ff, rng);
        let up = nonneg(d_in, d_ff, rng);
        let raw: Vec<f64> = (0..d_out).map(|_| rng.uniform() + 0.01).collect();
        let total: f64 = raw.iter().sum();
        Eq1Network {
            v: Tensor2D::random_normal(d_out, d_ff, 1.0, rng),
            sigma_kind: kind,
            theta,
            up: (kind == FfnKind::Swiglu).then_some(up),
            x: Vector((0..d_in).map(|_| rng.uniform() + 1e-3).collect()),
            y: Vector(raw.iter().map(|r| r / total).collect()),
        }
    }

    pub fn d_ff(&self) -> usize {
        self.v.cols()
    }

    pub fn pre_activation(&self) -> Result<Vector> {
        vecmat(&self.x, &self.theta)
    }

    /// The activation vector `σ(p)` that `V` multiplies.
    pub fn activation(&self) -> Result<Vector> {
        let p = self.pre_activation()?;
        Ok(match (self.sigma_kind, &self.up) {
            (FfnKind::Swiglu, Some(up)) => {
                let u = vecmat(&self.x, up)?;
                Vector(p.iter().zip(u.iter()).map(|(&g, &u)| swish1_scalar(g) * u).collect())
            }
            (FfnKind::Swiglu, None) => return Err(LabError::dims("Eq1Network", "SwiGLU needs an up matrix")),
            (FfnKind::Relu, _) => Vector(p.iter().map(|&g| g.max(0.0)).collect()),
        })
    }

    /// `V a` for an arbitrary activation vector.
    pub fn logits_for(&self, activation: &[f64]) -> Result<Vector> {
        if activation.len() != self.d_ff() {
            return Err(LabError::dims("Eq1Network", format!("activation of {} for d_ff {}", activation.len(), self.d_ff())));
        }
        Ok(Vector(
            (0..self.v.rows())
                .map(|m| self.v.row(m).iter().zip(activation).map(|(v, a)| v * a).sum())
                .collect(),
        ))
    }

    pub fn loss_for(&self, activation: &[f64]) -> Result<f64> {
        cross_entropy(&self.logits_for(activation)?, &self.y)
    }
}

/// `∂ CE(V a, y) / ∂ a_{i*}` in closed form:
/// `⟨softmax(V a), v_{i*}⟩ - ⟨v_{i*}, y⟩`, with the softmax max-shifted.
pub fn grad_wrt_p(net: &Eq1Network, i_star: usize) -> Result<f64> {
    net.validate()?;
    if i_star >= net.d_ff() {
        return Err(LabError::contract("grad_wrt_p", format!("i* = {i_star} out of {}", net.d_ff())));
    }
    let a = net.activation()?;
    if !(a[i_star] > 0.0) {
        return Err(LabError::contract("grad_wrt_p", format!("activation at i* = {i_star} is {} (needs > 0)", a[i_star])));
    }
    Ok(grad_at(net, &a, i_star))
}

pub(crate) fn grad_at(net: &Eq1Network, activation: &[f64], i_star: usize) -> f64 {
    let z = net.logits_for(activation).expect("activation width checked");
    let s = softmax(&z);
    let col = net.v.column(i_star);
    let expected: f64 = s.iter().zip(&col).map(|(p, v)| p * v).sum();
    let target: f64 = net.y.iter().zip(&col).map(|(y, v)| y * v).sum();
    expected - target
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, Rng};

    #[test]
    fn matches_finite_differences() {
        let mut rng = Rng::new(21);
        for kind in [FfnKind::Relu, FfnKind::Swiglu] {
            let net = Eq1Network::random(kind, 6, 10, 5, &mut rng);
            let a = net.activation().unwrap();
            let fd = finite_diff_grad(|a| net.loss_for(a).unwrap(), &a, 1e-5).unwrap();
            for i in 0..10 {
                let g = grad_wrt_p(&net, i).unwrap();
                assert!((g - fd[i]).abs() <= 1e-5 * g.abs().max(fd[i].abs()), "{kind:?} {i}: {g} vs {}", fd[i]);
            }
        }
    }

    #[test]
    fn zero_at_fixed_point() {
        let mut net = Eq1Network::random(FfnKind::Relu, 4, 6, 5, &mut Rng::new(3));
        let a = net.activation().unwrap();
        net.y = softmax(&net.logits_for(&a).unwrap());
        for i in 0..6 {
            assert!(grad_wrt_p(&net, i).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn one_dimensional_output() {
        let mut net = Eq1Network::random(FfnKind::Relu, 3, 4, 1, &mut Rng::new(8));
        let v = net.v.get(0, 2);
        net.y = Vector(vec![1.0]);
        assert_eq!(grad_wrt_p(&net, 2).unwrap(), 0.0);
        // A one-entry target must be 1, so other values only reach the raw formula.
        let a = net.activation().unwrap();
        for y in [0.3, 0.0] {
            net.y = Vector(vec![y]);
            assert!((grad_at(&net, &a, 2) - v * (1.0 - y)).abs() < 1e-12);
        }
    }

    #[test]
    fn precondition_and_shapes() {
        let mut net = Eq1Network::random(FfnKind::Relu, 3, 4, 2, &mut Rng::new(1));
        net.x = Vector(vec![-1.0; 3]);
        assert!(matches!(grad_wrt_p(&net, 0), Err(LabError::Contract { .. })));
        let mut net = Eq1Network::random(FfnKind::Swiglu, 3, 4, 2, &mut Rng::new(1));
        net.up = None;
        assert!(grad_wrt_p(&net, 0).is_err());
        let mut net = Eq1Network::random(FfnKind::Relu, 3, 4, 2, &mut Rng::new(1));
        net.y = Vector(vec![0.7, 0.7]);
        assert!(grad_wrt_p(&net, 0).is_err());
    }
}
