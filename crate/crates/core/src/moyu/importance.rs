use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::{FfnKind, ToyTransformer};
use crate::numerics::{dot, Tensor2D};

fn jacobian_residual(jx: &Tensor2D, dx: &[f64], jtheta: &Tensor2D, dtheta: &[f64]) -> Result<Vec<f64>> {
    if jx.cols() != dx.len() || jtheta.cols() != dtheta.len() || jx.rows() != jtheta.rows() {
        return Err(LabError::dims(
            "simplified_loss",
            format!("Jx {:?}, dx {}, Jθ {:?}, dθ {}", jx.shape(), dx.len(), jtheta.shape(), dtheta.len()),
        ));
    }
    Ok((0..jx.rows()).map(|r| dot(jx.row(r), dx) + dot(jtheta.row(r), dtheta)).collect())
}

/// `‖Jx dx + Jθ dθ‖²`.
pub fn simplified_loss(jx: &Tensor2D, dx: &[f64], jtheta: &Tensor2D, dtheta: &[f64]) -> Result<f64> {
    let r = jacobian_residual(jx, dx, jtheta, dtheta)?;
    Ok(dot(&r, &r))
}

/// `2 Jθᵀ (Jx dx + Jθ dθ)`.
pub fn loss_grad_wrt_dtheta(jx: &Tensor2D, dx: &[f64], jtheta: &Tensor2D, dtheta: &[f64]) -> Result<Vec<f64>> {
    let r = jacobian_residual(jx, dx, jtheta, dtheta)?;
    Ok((0..jtheta.cols())
        .map(|c| 2.0 * (0..jtheta.rows()).map(|m| jtheta.get(m, c) * r[m]).sum::<f64>())
        .collect())
}

/// A gradient total split into the newest step and everything before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSum {
    pub total: Vec<f64>,
    pub current: Vec<f64>,
    pub historical: Vec<f64>,
}

/// Left-to-right running sum starting from `+0.0`.
pub fn gradient_sum(per_step: &[Vec<f64>]) -> Result<GradientSum> {
    let (current, earlier) = per_step.split_last().ok_or(LabError::Empty("gradient steps"))?;
    let n = current.len();
    if earlier.iter().any(|g| g.len() != n) {
        return Err(LabError::dims("gradient_sum", "steps differ in length"));
    }
    let mut historical = vec![0.0; n];
    for g in earlier {
        for (h, v) in historical.iter_mut().zip(g) {
            *h += v;
        }
    }
    let total = historical.iter().zip(current).map(|(h, c)| h + c).collect();
    Ok(GradientSum {
        total,
        current: current.clone(),
        historical,
    })
}

/// Accumulated `Σ |V| ⊙ |∇L_i|` and the number of steps folded in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceState {
    pub theta: Tensor2D,
    pub step: usize,
}

impl ImportanceState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            theta: Tensor2D::zeros(rows, cols),
            step: 0,
        }
    }
}

pub fn importance_increment(v: &Tensor2D, grad: &[f64]) -> Result<Vec<f64>> {
    if v.data().len() != grad.len() {
        return Err(LabError::dims(
            "importance_update",
            format!("weights {:?} against gradient of {}", v.shape(), grad.len()),
        ));
    }
    Ok(v.data().iter().zip(grad).map(|(w, g)| w.abs() * g.abs()).collect())
}

/// `Θ_i = Θ_{i-1} + |V| ⊙ |∇L_i|`.
pub fn importance_update(state: &ImportanceState, v: &Tensor2D, grad: &[f64]) -> Result<ImportanceState> {
    if state.theta.shape() != v.shape() {
        return Err(LabError::dims("importance_update", format!("state {:?} vs weights {:?}", state.theta.shape(), v.shape())));
    }
    let inc = importance_increment(v, grad)?;
    let mut theta = state.theta.clone();
    for (t, i) in theta.data_mut().iter_mut().zip(&inc) {
        *t += i;
    }
    Ok(ImportanceState {
        theta,
        step: state.step + 1,
    })
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    pearson(&ranks(a), &ranks(b))
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Importance tracked on one model's last-layer down-projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTrack {
    pub ffn_kind: FfnKind,
    pub tokens: usize,
    /// Mean over tokens of the rank correlation between the token's increment
    /// and the importance accumulated before it.
    pub increment_rank_correlation: f64,
    pub correlated_tokens: usize,
    /// Pearson correlation between final importance and `|V|`.
    pub weight_magnitude_correlation: Option<f64>,
    /// Increments on neurons whose activation was exactly zero.
    pub inactive_entries: usize,
    pub nonzero_inactive_increments: usize,
}

/// Folds every next-token prediction of `corpus` (in order) into the
/// importance of the last layer's down-projection.
pub fn track_importance(model: &ToyTransformer, corpus: &[Vec<usize>], max_tokens: Option<usize>) -> Result<(ImportanceState, ImportanceTrack)> {
    let v = &model.layers.last().expect("at least one layer").w_down;
    let (ff, d) = v.shape();
    let mut state = ImportanceState::new(ff, d);
    let mut corr_sum = 0.0;
    let mut correlated = 0usize;
    let (mut inactive, mut nonzero_inactive) = (0usize, 0usize);
    let limit = max_tokens.unwrap_or(usize::MAX);
    'outer: for seq in corpus {
        if seq.len() < 2 {
            continue;
        }
        for g in model.down_projection_token_grads(seq)? {
            if state.step >= limit {
                break 'outer;
            }
            let grad = g.outer();
            let inc = importance_increment(v, &grad)?;
            for (j, &p) in g.post.iter().enumerate() {
                if p == 0.0 {
                    inactive += d;
                    nonzero_inactive += inc[j * d..(j + 1) * d].iter().filter(|&&x| x != 0.0).count();
                }
            }
            if state.step > 0 {
                if let Some(r) = spearman(&inc, state.theta.data()) {
                    corr_sum += r;
                    correlated += 1;
                }
            }
            state = importance_update(&state, v, &grad)?;
        }
    }
    if state.step == 0 {
        return Err(LabError::Empty("importance corpus"));
    }
    let mags: Vec<f64> = v.data().iter().map(|w| w.abs()).collect();
    let track = ImportanceTrack {
        ffn_kind: model.config.ffn_kind,
        tokens: state.step,
        increment_rank_correlation: if correlated > 0 { corr_sum / correlated as f64 } else { f64::NAN },
        correlated_tokens: correlated,
        weight_magnitude_correlation: pearson(state.theta.data(), &mags),
        inactive_entries: inactive,
        nonzero_inactive_increments: nonzero_inactive,
    };
    Ok((state, track))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceDivergence {
    pub relu: ImportanceTrack,
    pub swiglu: ImportanceTrack,
    /// ReLU increments track accumulated importance more closely than SwiGLU's.
    pub relu_correlation_higher: bool,
}

pub fn importance_divergence(
    model_relu: &ToyTransformer,
    model_swiglu: &ToyTransformer,
    corpus: &[Vec<usize>],
    max_tokens: Option<usize>,
) -> Result<ImportanceDivergence> {
    if model_relu.config.ffn_kind != FfnKind::Relu || model_swiglu.config.ffn_kind != FfnKind::Swiglu {
        return Err(LabError::contract("importance_divergence", "expects a ReLU model and a SwiGLU model"));
    }
    let (_, relu) = track_importance(model_relu, corpus, max_tokens)?;
    let (_, swiglu) = track_importance(model_swiglu, corpus, max_tokens)?;
    Ok(ImportanceDivergence {
        relu_correlation_higher: relu.increment_rank_correlation > swiglu.increment_rank_correlation,
        relu,
        swiglu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, Rng};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Tensor2D {
        Tensor2D::random_normal(rows, cols, 1.0, rng)
    }

    fn vec_of(n: usize, scale: f64, rng: &mut Rng) -> Vec<f64> {
        (0..n).map(|_| scale * rng.normal()).collect()
    }

    #[test]
    fn loss_cases() {
        let mut rng = Rng::new(5);
        let (jx, jt) = (random(4, 3, &mut rng), random(4, 6, &mut rng));
        assert_eq!(simplified_loss(&jx, &[0.0; 3], &jt, &[0.0; 6]).unwrap(), 0.0);
        let dx = vec_of(3, 0.01, &mut rng);
        let zero = Tensor2D::zeros(4, 6);
        let direct: f64 = (0..4).map(|r| dot(jx.row(r), &dx).powi(2)).sum();
        assert_eq!(simplified_loss(&jx, &dx, &zero, &[0.3; 6]).unwrap(), direct);
        assert!(loss_grad_wrt_dtheta(&jx, &dx, &zero, &[0.3; 6]).unwrap().iter().all(|&g| g == 0.0));
        assert!(simplified_loss(&jx, &dx, &random(5, 6, &mut rng), &[0.0; 6]).is_err());
    }

    #[test]
    fn explicit_expansion() {
        let mut rng = Rng::new(9);
        let (jx, jt) = (random(5, 3, &mut rng), random(5, 4, &mut rng));
        let (dx, dt) = (vec_of(3, 0.1, &mut rng), vec_of(4, 0.1, &mut rng));
        let a = DMatrix::from_row_slice(5, 3, jx.data()) * DMatrix::from_column_slice(3, 1, &dx)
            + DMatrix::from_row_slice(5, 4, jt.data()) * DMatrix::from_column_slice(4, 1, &dt);
        let expected = a.norm_squared();
        let got = simplified_loss(&jx, &dx, &jt, &dt).unwrap();
        assert!((got - expected).abs() <= 1e-14 * expected);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(13);
        let (jx, jt) = (random(6, 4, &mut rng), random(6, 5, &mut rng));
        let (dx, dt) = (vec_of(4, 0.01, &mut rng), vec_of(5, 0.01, &mut rng));
        let g = loss_grad_wrt_dtheta(&jx, &dx, &jt, &dt).unwrap();
        let fd = finite_diff_grad(|t| simplified_loss(&jx, &dx, &jt, t).unwrap(), &dt, 1e-5).unwrap();
        for (a, n) in g.iter().zip(fd.iter()) {
            assert!((a - n).abs() <= 1e-6 * a.abs().max(n.abs()), "{a} vs {n}");
        }
    }

    #[test]
    fn stationary_at_least_squares_solution() {
        let mut rng = Rng::new(17);
        let (jx, jt) = (random(3, 4, &mut rng), random(3, 7, &mut rng));
        let dx = vec_of(4, 1.0, &mut rng);
        let jt_m = DMatrix::from_row_slice(3, 7, jt.data());
        let rhs = -(DMatrix::from_row_slice(3, 4, jx.data()) * DMatrix::from_column_slice(4, 1, &dx));
        let dt = jt_m.pseudo_inverse(1e-12).unwrap() * rhs;
        let g = loss_grad_wrt_dtheta(&jx, &dx, &jt, dt.as_slice()).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
    }

    #[test]
    fn gradient_sum_cases() {
        let one = gradient_sum(&[vec![1.5, -2.0]]).unwrap();
        assert_eq!(one.total, vec![1.5, -2.0]);
        assert_eq!(one.historical, vec![0.0, 0.0]);
        assert!(gradient_sum(&[]).is_err());
        assert!(gradient_sum(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn importance_base_case() {
        let mut rng = Rng::new(2);
        let v = random(3, 2, &mut rng);
        let g = vec_of(6, 1.0, &mut rng);
        let s = importance_update(&ImportanceState::new(3, 2), &v, &g).unwrap();
        let expected: Vec<f64> = v.data().iter().zip(&g).map(|(w, g)| w.abs() * g.abs()).collect();
        assert_eq!(s.theta.data(), expected.as_slice());
        assert_eq!(s.step, 1);
        assert!(importance_update(&s, &v, &g[..5]).is_err());
    }

    #[test]
    fn rank_correlation_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[0.0, 0.0, 1.0, 2.0], &[0.0, 0.0, 2.0, 4.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert_eq!(ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    proptest! {
        #[test]
        fn permuting_steps_keeps_total(
            steps in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 2..8),
            seed in any::<u64>(),
        ) {
            let mut permuted = steps.clone();
            Rng::new(seed).shuffle(&mut permuted);
            let a = gradient_sum(&steps).unwrap();
            let b = gradient_sum(&permuted).unwrap();
            // Fixed-order re-summation of each ordering reproduces its total bitwise.
            for (gs, order) in [(&a, &steps), (&b, &permuted)] {
                let mut acc = vec![0.0; 4];
                for s in order.iter() {
                    for (x, v) in acc.iter_mut().zip(s) {
                        *x += v;
                    }
                }
                prop_assert_eq!(&gs.total, &acc);
            }
            for (x, y) in a.total.iter().zip(&b.total) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
            prop_assert_eq!(&a.current, steps.last().unwrap());
        }

        #[test]
        fn loss_is_nonnegative(data in prop::collection::vec(-10.0f64..10.0, 6 * 3 + 6 * 2 + 5)) {
            let jx = Tensor2D::new(6, 3, data[..18].to_vec()).unwrap();
            let jt = Tensor2D::new(6, 2, data[18..30].to_vec()).unwrap();
            prop_assert!(simplified_loss(&jx, &data[30..33], &jt, &data[33..35]).unwrap() >= 0.0);
        }

        #[test]
        fn recursion_equals_batch_sum(grads in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 1..20)) {
            let v = Tensor2D::new(2, 3, vec![0.5, -1.0, 2.0, 0.0, -0.25, 3.0]).unwrap();
            let mut state = ImportanceState::new(2, 3);
            let mut prev = state.theta.clone();
            for g in &grads {
                state = importance_update(&state, &v, g).unwrap();
                prop_assert!(state.theta.data().iter().zip(prev.data()).all(|(a, b)| a >= b));
                prev = state.theta.clone();
            }
            let mut batch = vec![0.0; 6];
            for g in &grads {
                for ((b, w), gi) in batch.iter_mut().zip(v.data()).zip(g) {
                    *b += w.abs() * gi.abs();
                }
            }
            prop_assert_eq!(state.theta.data(), batch.as_slice());
        }
    }
}
