use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dasparse::top_k_indices;
use crate::error::{LabError, Result};
use crate::model::ActivationTrace;
use crate::numerics::Tensor2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InertiaMetrics {
    pub jaccard_mean: f64,
    pub jaccard_sd: f64,
    /// Gini coefficient of how often each neuron lands in a token's top set.
    pub concentration: f64,
    /// Fraction of tokens after the first whose top set meets the first token's.
    pub persistence: f64,
    pub top_count: usize,
    pub tokens: usize,
}

pub fn top_count(width: usize, q: f64) -> usize {
    ((q * width as f64).ceil() as usize).clamp(1, width)
}

/// Per-token top-`q` neuron sets by `|activation|`.
pub fn top_sets(activations: &Tensor2D, q: f64) -> Result<Vec<BTreeSet<usize>>> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(LabError::contract("inertia_metrics", format!("q = {q} outside (0, 1]")));
    }
    let k = top_count(activations.cols(), q);
    Ok((0..activations.rows())
        .map(|r| {
            let mags: Vec<f64> = activations.row(r).iter().map(|a| a.abs()).collect();
            top_k_indices(&mags, k).into_iter().collect()
        })
        .collect())
}

pub fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Gini coefficient of non-negative values; zero for an all-zero input.
pub fn gini(values: &[f64]) -> f64 {
    let n = values.len();
    let total: f64 = values.iter().sum();
    if n == 0 || total <= 0.0 {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Sorted form of sum_ij |x_i - x_j| / (2 n^2 mean).
    let weighted: f64 = sorted.iter().enumerate().map(|(i, x)| (2.0 * (i as f64 + 1.0) - n as f64 - 1.0) * x).sum();
    (weighted / (n as f64 * total)).clamp(0.0, 1.0)
}

pub fn metrics_from_activations(activations: &Tensor2D, q: f64) -> Result<InertiaMetrics> {
    let t = activations.rows();
    if t < 2 {
        return Err(LabError::contract("inertia_metrics", format!("need at least 2 tokens, got {t}")));
    }
    let sets = top_sets(activations, q)?;
    let js: Vec<f64> = sets.windows(2).map(|w| jaccard(&w[0], &w[1])).collect();
    let mean = js.iter().sum::<f64>() / js.len() as f64;
    let var = js.iter().map(|j| (j - mean) * (j - mean)).sum::<f64>() / js.len() as f64;
    let mut freq = vec![0.0; activations.cols()];
    for s in &sets {
        for &i in s {
            freq[i] += 1.0 / t as f64;
        }
    }
    let persistent = sets[1..].iter().filter(|s| !s.is_disjoint(&sets[0])).count();
    Ok(InertiaMetrics {
        jaccard_mean: mean,
        jaccard_sd: var.sqrt(),
        concentration: gini(&freq),
        persistence: persistent as f64 / (t - 1) as f64,
        top_count: top_count(activations.cols(), q),
        tokens: t,
    })
}

pub fn inertia_metrics(trace: &ActivationTrace, layer: usize, q: f64) -> Result<InertiaMetrics> {
    metrics_from_activations(&trace.layer(layer)?.post_activation, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_gini(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let mut s = 0.0;
        for a in x {
            for b in x {
                s += (a - b).abs();
            }
        }
        s / (2.0 * n * n * mean)
    }

    #[test]
    fn gini_cases() {
        assert_eq!(gini(&[1.0; 5]), 0.0);
        assert!((gini(&[0.0, 0.0, 0.0, 1.0]) - 0.75).abs() < 1e-15);
        assert_eq!(gini(&[0.0; 3]), 0.0);
    }

    #[test]
    fn constructed_cases() {
        let same = Tensor2D::from_rows(&vec![vec![0.1, 3.0, -2.0, 0.5]; 5]).unwrap();
        let m = metrics_from_activations(&same, 0.5).unwrap();
        assert_eq!((m.jaccard_mean, m.persistence), (1.0, 1.0));
        let disjoint = Tensor2D::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]]).unwrap();
        let m = metrics_from_activations(&disjoint, 0.25).unwrap();
        assert_eq!(m.jaccard_mean, 0.0);
        assert_eq!(m.persistence, 0.0);
        let noisy = Tensor2D::from_rows(&[vec![1.0, -4.0, 2.0], vec![0.3, 0.2, 9.0]]).unwrap();
        assert_eq!(metrics_from_activations(&noisy, 1.0).unwrap().jaccard_mean, 1.0);
        assert!(metrics_from_activations(&Tensor2D::zeros(1, 3), 0.5).is_err());
        assert!(metrics_from_activations(&noisy, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn gini_matches_pairwise_sum(x in prop::collection::vec(0.01f64..10.0, 1..30)) {
            prop_assert!((gini(&x) - brute_gini(&x)).abs() < 1e-12);
        }

        #[test]
        fn invariant_under_token_rescaling(
            data in prop::collection::vec(-3.0f64..3.0, 40),
            scales in prop::collection::vec(0.01f64..100.0, 5),
            q in 0.05f64..1.0,
        ) {
            let a = Tensor2D::new(5, 8, data).unwrap();
            let mut b = a.clone();
            for (r, s) in scales.iter().enumerate() {
                b.row_mut(r).iter_mut().for_each(|v| *v *= s);
            }
            let ma = metrics_from_activations(&a, q).unwrap();
            let mb = metrics_from_activations(&b, q).unwrap();
            prop_assert_eq!(ma, mb);
        }

        #[test]
        fn metric_ranges(data in prop::collection::vec(-3.0f64..3.0, 48), q in 0.01f64..1.0) {
            let m = metrics_from_activations(&Tensor2D::new(6, 8, data).unwrap(), q).unwrap();
            prop_assert!((0.0..=1.0).contains(&m.jaccard_mean));
            prop_assert!((0.0..=1.0).contains(&m.concentration));
            prop_assert!((0.0..=1.0).contains(&m.persistence));
        }
    }
}
