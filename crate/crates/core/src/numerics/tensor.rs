use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use super::rng::Rng;
use crate::error::{LabError, Result};

/// Dense row-major matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dense vector of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(pub Vec<f64>);

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

impl Vector {
    pub fn zeros(n: usize) -> Self {
        Vector(vec![0.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LabError::dims(
                "Tensor2D::new",
                format!("{} elements for {rows}x{cols}", data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(LabError::contract("Tensor2D::new", format!("non-finite element {bad}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(LabError::dims("Tensor2D::from_rows", "ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// I.i.d. zero-mean Gaussian entries with the given standard deviation.
    pub fn random_normal(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| std * rng.normal()).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Tensor2D {
        let mut out = Tensor2D::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copy without the listed rows.
    pub fn without_rows(&self, drop: &[usize]) -> Tensor2D {
        let mut data = Vec::with_capacity(self.data.len());
        let mut rows = 0;
        for r in 0..self.rows {
            if !drop.contains(&r) {
                data.extend_from_slice(self.row(r));
                rows += 1;
            }
        }
        Tensor2D {
            rows,
            cols: self.cols,
            data,
        }
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Tensor2D, scale: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(LabError::dims(
                "Tensor2D::add_scaled",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }
}

/// Matrix product. Each output element is accumulated left to right over the
/// inner index starting from +0.0, so results are bit-stable.
pub fn matmul(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.rows {
        return Err(LabError::contract(
            "matmul",
            format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = Tensor2D::zeros(a.rows, b.cols);
    matmul_into(&a.data, a.rows, a.cols, &b.data, b.cols, &mut out.data);
    Ok(out)
}

/// Row vector times matrix: `out[j] = sum_k x[k] * m[k, j]`, k ascending.
pub fn vecmat(x: &[f64], m: &Tensor2D) -> Result<Vector> {
    if x.len() != m.rows {
        return Err(LabError::dims(
            "vecmat",
            format!("vector of {} times {}x{}", x.len(), m.rows, m.cols),
        ));
    }
    let mut out = vec![0.0; m.cols];
    vecmat_into(x, &m.data, m.cols, &mut out);
    Ok(Vector(out))
}

pub(crate) fn vecmat_into(x: &[f64], m: &[f64], cols: usize, out: &mut [f64]) {
    debug_assert_eq!(m.len(), x.len() * cols);
    out.iter_mut().for_each(|o| *o = 0.0);
    for (k, &xk) in x.iter().enumerate() {
        let row = &m[k * cols..(k + 1) * cols];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += xk * w;
        }
    }
}

pub(crate) fn matmul_into(a: &[f64], n: usize, inner: usize, b: &[f64], m: usize, out: &mut [f64]) {
    for i in 0..n {
        vecmat_into(&a[i * inner..(i + 1) * inner], b, m, &mut out[i * m..(i + 1) * m]);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_a_is_a() {
        let a = Tensor2D::from_rows(&[vec![1.5, -2.0], vec![0.25, 7.0]]).unwrap();
        assert_eq!(matmul(&Tensor2D::identity(2), &a).unwrap(), a);
    }

    #[test]
    fn hand_computed_product() {
        let a = Tensor2D::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor2D::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c, Tensor2D::from_rows(&[vec![2.0], vec![4.0]]).unwrap());
    }

    #[test]
    fn ones_row_times_ones_column() {
        for k in [1usize, 3, 17] {
            let a = Tensor2D::new(1, k, vec![1.0; k]).unwrap();
            let b = Tensor2D::new(k, 1, vec![1.0; k]).unwrap();
            assert_eq!(matmul(&a, &b).unwrap().data(), &[k as f64]);
        }
    }

    #[test]
    fn mismatched_inner_dimension_is_contract_violation() {
        let a = Tensor2D::zeros(2, 3);
        let b = Tensor2D::zeros(2, 3);
        assert!(matches!(matmul(&a, &b), Err(LabError::Contract { .. })));
    }

    #[test]
    fn rejects_non_finite_and_bad_length() {
        assert!(Tensor2D::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Tensor2D::new(2, 2, vec![1.0]).is_err());
    }

    #[test]
    fn vecmat_matches_matmul() {
        let mut rng = Rng::new(5);
        let m = Tensor2D::random_normal(4, 3, 1.0, &mut rng);
        let x = Tensor2D::random_normal(1, 4, 1.0, &mut rng);
        let via_mat = matmul(&x, &m).unwrap();
        assert_eq!(vecmat(x.row(0), &m).unwrap().0, via_mat.data());
    }

    #[test]
    fn transpose_round_trip() {
        let mut rng = Rng::new(9);
        let m = Tensor2D::random_normal(3, 5, 1.0, &mut rng);
        assert_eq!(m.transpose().transpose(), m);
        assert_eq!(m.transpose().get(4, 2), m.get(2, 4));
    }
}
