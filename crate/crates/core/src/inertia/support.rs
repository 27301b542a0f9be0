use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numerics::check_distribution;

/// Tolerance used when checking that attention rows sum to one.
pub(crate) const DISTRIBUTION_TOL: f64 = 1e-9;

/// Indices whose weight strictly exceeds `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    pub indices: BTreeSet<usize>,
    pub threshold: f64,
}

impl SupportSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.contains(&i)
    }
}

pub(crate) fn check_threshold(op: &'static str, threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(LabError::contract(op, format!("support threshold {threshold} outside (0, 1)")))
    }
}

pub fn supp_tau(weights: &[f64], support_threshold: f64) -> Result<SupportSet> {
    check_threshold("supp_tau", support_threshold)?;
    check_distribution("supp_tau", weights, DISTRIBUTION_TOL)?;
    Ok(SupportSet {
        indices: weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > support_threshold)
            .map(|(i, _)| i)
            .collect(),
        threshold: support_threshold,
    })
}

/// Intersection of the rows' supports: the largest index set that every
/// row's support contains.
pub fn estimate_h2<R: AsRef<[f64]>>(rows: &[R], support_threshold: f64) -> Result<BTreeSet<usize>> {
    let (first, rest) = rows.split_first().ok_or(LabError::Empty("attention rows"))?;
    let mut acc = supp_tau(first.as_ref(), support_threshold)?.indices;
    for r in rest {
        let s = supp_tau(r.as_ref(), support_threshold)?;
        acc.retain(|i| s.contains(*i));
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn support_cases() {
        let m = 7;
        let uniform = vec![1.0 / m as f64; m];
        assert_eq!(supp_tau(&uniform, 1.0 / (m as f64 + 1.0)).unwrap().len(), m);
        assert_eq!(supp_tau(&[0.0, 1.0, 0.0], 0.5).unwrap().indices, set(&[1]));
        assert_eq!(supp_tau(&[0.5, 0.3, 0.2], 0.25).unwrap().indices, set(&[0, 1]));
        assert_eq!(supp_tau(&[0.5, 0.5], 0.5).unwrap().indices, set(&[]));
        assert!(supp_tau(&[0.5, 0.6], 0.25).is_err());
        assert!(supp_tau(&[0.5, 0.5], 0.0).is_err());
        assert!(supp_tau(&[0.5, 0.5], 1.0).is_err());
    }

    #[test]
    fn h2_cases() {
        let row = [0.6, 0.3, 0.1];
        assert_eq!(estimate_h2(&[row], 0.2).unwrap(), set(&[0, 1]));
        assert!(estimate_h2(&[[0.9, 0.1], [0.1, 0.9]], 0.5).unwrap().is_empty());
        let rows = [
            [0.45, 0.45, 0.04, 0.06, 0.0],
            [0.40, 0.50, 0.0, 0.02, 0.08],
            [0.47, 0.44, 0.09, 0.0, 0.0],
        ];
        assert_eq!(estimate_h2(&rows, 0.1).unwrap(), set(&[0, 1]));
        assert!(estimate_h2::<Vec<f64>>(&[], 0.1).is_err());
    }

    fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn support_is_monotone(w in distribution(12), a in 0.001f64..0.999, b in 0.001f64..0.999) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let s_lo = supp_tau(&w, lo).unwrap();
            let s_hi = supp_tau(&w, hi).unwrap();
            prop_assert!(s_hi.indices.is_subset(&s_lo.indices));
        }

        #[test]
        fn h2_inside_every_support(rows in prop::collection::vec(distribution(8), 1..6), tau in 0.01f64..0.5) {
            let h2 = estimate_h2(&rows, tau).unwrap();
            for r in &rows {
                prop_assert!(h2.is_subset(&supp_tau(r, tau).unwrap().indices));
            }
        }
    }
}
