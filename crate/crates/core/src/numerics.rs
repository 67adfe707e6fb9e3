//! Dense f64 linear algebra, normalization, and the finite-difference oracle.
//!
//! Vectors are plain `[f64]` slices / `Vec<f64>`; `Matrix` is row-major.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms at or below this are rejected by [`l2_normalize`].
pub const NORM_FLOOR: f64 = 1e-12;

/// Default step for [`finite_diff_grad`].
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::DimensionMismatch { expected: rows * cols, found: values.len() });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len(cols, r.len())?;
            values.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.cols, x.len())?;
        Ok((0..self.rows).map(|r| dot_unchecked(self.row(r), x)).collect())
    }

    /// `selfᵀ · y`.
    pub fn matvec_transposed(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.rows, y.len())?;
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            axpy(yr, self.row(r), &mut out);
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_len(self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                let dst = &mut out.values[r * other.cols..(r + 1) * other.cols];
                axpy(a, other.row(k), dst);
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    /// `self += scale · a ⊗ b` (outer product).
    pub fn add_outer(&mut self, scale: f64, a: &[f64], b: &[f64]) -> Result<()> {
        check_len(self.rows, a.len())?;
        check_len(self.cols, b.len())?;
        for (r, &ar) in a.iter().enumerate() {
            if ar == 0.0 {
                continue;
            }
            let dst = &mut self.values[r * self.cols..(r + 1) * self.cols];
            axpy(scale * ar, b, dst);
        }
        Ok(())
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok(dot_unchecked(a, b))
}

pub fn norm(v: &[f64]) -> f64 {
    libm::sqrt(dot_unchecked(v, v))
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > NORM_FLOOR) {
        return Err(Error::ZeroNorm);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Vector-Jacobian product of `v ↦ v/‖v‖` at `v`:
/// `(g − y (y·g)) / ‖v‖` with `y = v/‖v‖`.
pub fn l2_normalize_backward(v: &[f64], grad_out: &[f64]) -> Result<Vec<f64>> {
    check_len(v.len(), grad_out.len())?;
    let n = norm(v);
    if !(n > NORM_FLOOR) {
        return Err(Error::ZeroNorm);
    }
    let y: Vec<f64> = v.iter().map(|x| x / n).collect();
    let yg = dot_unchecked(&y, grad_out);
    Ok(grad_out.iter().zip(&y).map(|(g, yi)| (g - yi * yg) / n).collect())
}

/// `y += a · x`.
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn add(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x + y).collect())
}

pub fn sub(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

pub fn scale(a: f64, v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| a * x).collect()
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Central-difference gradient `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h` per coordinate.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidConfig { field: "h", reason: "step must be positive" });
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteFunction);
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
    let denom = norm(a).max(norm(b));
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_vec(rng: &mut SeededRng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.normal()).collect()
    }

    fn random_matrix(rng: &mut SeededRng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, random_vec(rng, r * c)).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert_eq!(v, vec![0.6, 0.8]);
    }

    #[test]
    fn normalize_zero_is_error() {
        assert_eq!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroNorm));
        assert_eq!(l2_normalize(&[1e-13, 0.0]), Err(Error::ZeroNorm));
    }

    #[test]
    fn normalize_random_has_unit_norm_and_is_idempotent() {
        let mut rng = SeededRng::new(1);
        for _ in 0..100 {
            let v = random_vec(&mut rng, 5);
            let u = l2_normalize(&v).unwrap();
            let n = libm::sqrt(u.iter().map(|x| x * x).sum::<f64>());
            assert!((n - 1.0).abs() < 1e-12);
            let uu = l2_normalize(&u).unwrap();
            for (a, b) in u.iter().zip(&uu) {
                assert!((a - b).abs() < 1e-12);
            }
            // same direction
            assert!(dot(&u, &v).unwrap() > 0.0);
        }
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(dot(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let u = l2_normalize(&[0.3, -1.2, 2.0]).unwrap();
        assert!((dot(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            dot(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 1, found: 2 })
        );
    }

    #[test]
    fn dot_symmetric_and_bilinear() {
        let mut rng = SeededRng::new(2);
        for _ in 0..100 {
            let a = random_vec(&mut rng, 6);
            let b = random_vec(&mut rng, 6);
            let c = random_vec(&mut rng, 6);
            let s = rng.normal();
            assert!((dot(&a, &b).unwrap() - dot(&b, &a).unwrap()).abs() < 1e-10);
            let lhs = dot(&add(&scale(s, &a), &c).unwrap(), &b).unwrap();
            let rhs = s * dot(&a, &b).unwrap() + dot(&c, &b).unwrap();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn matvec_examples() {
        let v = [1.5, -2.0, 0.25];
        assert_eq!(Matrix::identity(3).matvec(&v).unwrap(), v.to_vec());
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
        assert!(matches!(m.matvec(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn matmul_associates_with_matvec() {
        let mut rng = SeededRng::new(3);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 4, 4);
            let b = random_matrix(&mut rng, 4, 4);
            let v = random_vec(&mut rng, 4);
            let left = a.matmul(&b).unwrap().matvec(&v).unwrap();
            let right = a.matvec(&b.matvec(&v).unwrap()).unwrap();
            for (x, y) in left.iter().zip(&right) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn transposed_matvec_matches_transpose() {
        let mut rng = SeededRng::new(4);
        let a = random_matrix(&mut rng, 3, 5);
        let y = random_vec(&mut rng, 3);
        let direct = a.transpose().matvec(&y).unwrap();
        let fused = a.matvec_transposed(&y).unwrap();
        for (x, z) in direct.iter().zip(&fused) {
            assert!((x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_diff_quadratic() {
        let g = finite_diff_grad(|x| dot_unchecked(x, x), &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_constant_is_zero() {
        let g = finite_diff_grad(|_| 3.5, &[1.0, -2.0, 0.5], DEFAULT_FD_STEP).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn finite_diff_rejects_non_finite() {
        let r = finite_diff_grad(|x| 1.0 / x[0], &[0.0], 1e-5);
        assert!(r.is_ok());
        let r = finite_diff_grad(|x| if x[0] > 0.0 { f64::NAN } else { 0.0 }, &[0.0], 1e-5);
        assert_eq!(r, Err(Error::NonFiniteFunction));
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let v = [0.7, -1.3, 2.1];
        let g = [0.4, 1.0, -0.6];
        let analytic = l2_normalize_backward(&v, &g).unwrap();
        let numeric = finite_diff_grad(
            |x| dot_unchecked(&l2_normalize(x).unwrap(), &g),
            &v,
            DEFAULT_FD_STEP,
        )
        .unwrap();
        assert!(relative_error(&analytic, &numeric) < 1e-8);
    }
}
