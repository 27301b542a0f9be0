use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::support::{check_threshold, supp_tau};
use crate::error::{LabError, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodMappingParams {
    pub s_star: BTreeSet<usize>,
    pub k: usize,
    pub alpha: f64,
    pub support_threshold: f64,
    pub n: usize,
}

impl GoodMappingParams {
    pub fn new(s_star: BTreeSet<usize>, alpha: f64, support_threshold: f64, n: usize) -> Result<Self> {
        let p = Self {
            k: s_star.len(),
            s_star,
            alpha,
            support_threshold,
            n,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k != self.s_star.len() {
            return Err(LabError::contract("GoodMappingParams", format!("k = {} but |S*| = {}", self.k, self.s_star.len())));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(LabError::contract("GoodMappingParams", format!("alpha {} outside (0, 1)", self.alpha)));
        }
        check_threshold("GoodMappingParams", self.support_threshold)
    }

    pub fn excess_bound(&self) -> f64 {
        self.alpha * self.k as f64
    }

    pub fn union_bound(&self) -> f64 {
        self.alpha * self.k as f64 * self.n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCheck {
    pub contains_s_star: bool,
    pub excess: usize,
    pub excess_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodMappingReport {
    pub samples: Vec<SampleCheck>,
    pub union_excess: usize,
    pub excess_bound: f64,
    pub union_bound: f64,
    pub containment_pass: bool,
    pub excess_pass: bool,
    pub union_pass: bool,
    /// Rows that failed containment or the per-row excess bound.
    pub violations: Vec<usize>,
}

impl GoodMappingReport {
    pub fn all_pass(&self) -> bool {
        self.containment_pass && self.excess_pass && self.union_pass
    }
}

/// Brute-force check of every row against the good-mapping definition.
/// The union bound uses the number of rows actually supplied.
pub fn verify_good_mapping<R: AsRef<[f64]>>(rows: &[R], params: &GoodMappingParams) -> Result<GoodMappingReport> {
    params.validate()?;
    let mut union = BTreeSet::new();
    let mut samples = Vec::with_capacity(rows.len());
    let mut violations = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let supp = supp_tau(r.as_ref(), params.support_threshold)?;
        let contains_s_star = params.s_star.is_subset(&supp.indices);
        let extra: Vec<usize> = supp.indices.difference(&params.s_star).copied().collect();
        let excess_ok = extra.len() as f64 <= params.excess_bound();
        if !(contains_s_star && excess_ok) {
            violations.push(i);
        }
        union.extend(extra.iter().copied());
        samples.push(SampleCheck {
            contains_s_star,
            excess: extra.len(),
            excess_ok,
        });
    }
    let union_bound = params.alpha * params.k as f64 * rows.len() as f64;
    Ok(GoodMappingReport {
        containment_pass: samples.iter().all(|s| s.contains_s_star),
        excess_pass: samples.iter().all(|s| s.excess_ok),
        union_pass: union.len() as f64 <= union_bound,
        union_excess: union.len(),
        excess_bound: params.excess_bound(),
        union_bound,
        samples,
        violations,
    })
}

/// Synthetic attention rows satisfying the good-mapping definition: `S*`
/// carries `1 - margin` of the mass (every share above the threshold), at
/// most `floor(alpha * k)` extra indices sit just above it, and the rest is
/// spread below it.
#[derive(Debug, Clone, PartialEq)]
pub struct GoodMappingGenerator {
    pub params: GoodMappingParams,
    pub width: usize,
    pub margin: f64,
}

impl GoodMappingGenerator {
    pub fn new(params: GoodMappingParams, width: usize, margin: f64) -> Result<Self> {
        params.validate()?;
        if params.s_star.iter().any(|&i| i >= width) {
            return Err(LabError::contract("GoodMappingGenerator", "S* index outside the row width"));
        }
        let extra = (params.alpha * params.k as f64).floor() as usize;
        let tau = params.support_threshold;
        // S* shares exceed (1 - margin) / 2k, extras take under 2 tau each,
        // and background shares are at most 3 * leftover / count.
        let k = params.k.max(1) as f64;
        let ok = params.k >= 1
            && margin > 0.0
            && margin < 1.0
            && (1.0 - margin) / (2.0 * k) > tau
            && margin > 2.0 * tau * extra as f64
            && width > params.k + extra
            && 3.0 * margin / (width - params.k - extra) as f64 <= tau;
        if !ok {
            return Err(LabError::contract(
                "GoodMappingGenerator",
                format!("margin {margin} incompatible with width {width}, k {}, tau {tau}", params.k),
            ));
        }
        Ok(Self { params, width, margin })
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let p = &self.params;
        let tau = p.support_threshold;
        let mut row = vec![0.0; self.width];
        // S* mass: weights in [1, 2) so every share exceeds (1 - margin) / 2k.
        let core: Vec<f64> = (0..p.k).map(|_| 1.0 + rng.uniform()).collect();
        let core_sum: f64 = core.iter().sum();
        for (&i, w) in p.s_star.iter().zip(&core) {
            row[i] = (1.0 - self.margin) * w / core_sum;
        }
        let mut others: Vec<usize> = (0..self.width).filter(|i| !p.s_star.contains(i)).collect();
        rng.shuffle(&mut others);
        let max_extra = (p.alpha * p.k as f64).floor() as usize;
        let n_extra = rng.index(max_extra + 1);
        let mut left = self.margin;
        for &i in &others[..n_extra] {
            row[i] = tau * (1.0 + 0.5 * rng.uniform()) + f64::EPSILON;
            left -= row[i];
        }
        let rest = &others[n_extra..];
        let noise: Vec<f64> = rest.iter().map(|_| 0.5 + rng.uniform()).collect();
        let total: f64 = noise.iter().sum();
        for (&i, w) in rest.iter().zip(&noise) {
            row[i] = left * w / total;
        }
        row
    }

    pub fn samples(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(s: &[usize], alpha: f64, tau: f64, n: usize) -> GoodMappingParams {
        GoodMappingParams::new(s.iter().copied().collect(), alpha, tau, n).unwrap()
    }

    #[test]
    fn generator_rows_pass() {
        let p = params(&[0, 3, 5, 9], 0.3, 0.05, 200);
        let g = GoodMappingGenerator::new(p.clone(), 64, 0.3).unwrap();
        let rows = g.samples(200, &mut Rng::new(4));
        for r in &rows {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let rep = verify_good_mapping(&rows, &p).unwrap();
        assert!(rep.all_pass(), "{:?}", rep.violations);
        assert!(rep.samples.iter().any(|s| s.excess > 0));
    }

    #[test]
    fn union_bound_small_case() {
        let p = params(&[1, 2], 0.5, 0.05, 10);
        let g = GoodMappingGenerator::new(p.clone(), 32, 0.3).unwrap();
        let rows = g.samples(10, &mut Rng::new(11));
        let rep = verify_good_mapping(&rows, &p).unwrap();
        let mut union = BTreeSet::new();
        for r in &rows {
            for (i, &w) in r.iter().enumerate() {
                if w > 0.05 && i != 1 && i != 2 {
                    union.insert(i);
                }
            }
        }
        assert_eq!(rep.union_excess, union.len());
        assert!(rep.union_excess <= 10);
        assert!(rep.union_pass);
    }

    #[test]
    fn violations_flagged() {
        let p = params(&[0, 1], 0.3, 0.1, 2);
        let low_core = [0.05, 0.45, 0.5];
        let rep = verify_good_mapping(&[low_core], &p).unwrap();
        assert!(!rep.samples[0].contains_s_star);
        assert_eq!(rep.violations, vec![0]);
        let too_many = [0.3, 0.3, 0.2, 0.2];
        let rep = verify_good_mapping(&[too_many], &p).unwrap();
        assert!(rep.samples[0].contains_s_star);
        assert_eq!(rep.samples[0].excess, 2);
        assert!(!rep.excess_pass);
    }

    #[test]
    fn invalid_params() {
        assert!(GoodMappingParams::new([0].into(), 1.0, 0.1, 1).is_err());
        assert!(GoodMappingParams::new([0].into(), 0.5, 0.0, 1).is_err());
        let mut p = params(&[0], 0.5, 0.1, 1);
        p.k = 2;
        assert!(verify_good_mapping(&[[1.0]], &p).is_err());
    }
}
