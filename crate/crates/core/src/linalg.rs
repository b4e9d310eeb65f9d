//! Small dense complex matrices: one-sided Jacobi SVD, solves and determinants.

use std::ops::{Index, IndexMut, Mul};

use num_complex::Complex64;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const SWEEPS: usize = 80;

/// Row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * x[j]).sum())
            .collect()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    fn col_dot(&self, i: usize, j: usize) -> Complex64 {
        (0..self.rows).map(|r| self[(r, i)].conj() * self[(r, j)]).sum()
    }

    fn col_norm_sqr(&self, i: usize) -> f64 {
        (0..self.rows).map(|r| self[(r, i)].norm_sqr()).sum()
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, rhs.rows);
        CMatrix::from_fn(self.rows, rhs.cols, |i, j| {
            (0..self.cols).map(|k| self[(i, k)] * rhs[(k, j)]).sum()
        })
    }
}

/// `A = U diag(sigma) V^H` with singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMatrix,
    pub sigma: Vec<f64>,
    pub v: CMatrix,
}

impl Svd {
    pub fn sigma_min(&self) -> f64 {
        self.sigma.last().copied().unwrap_or(0.0)
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    /// `|det A|` for square inputs.
    pub fn abs_det(&self) -> f64 {
        self.sigma.iter().product()
    }

    /// Least-norm solution of `A x = b`; fails when `A` is numerically
    /// singular relative to `rcond`.
    pub fn solve(&self, b: &[Complex64], rcond: f64) -> Result<Vec<Complex64>> {
        let top = self.sigma_max();
        if top == 0.0 || self.sigma_min() <= rcond * top {
            return Err(Error::Internal(format!(
                "matrix is numerically singular (sigma_min={:e}, sigma_max={:e})",
                self.sigma_min(),
                top
            )));
        }
        let utb = self.u.adjoint().mul_vec(b);
        let scaled: Vec<Complex64> = utb.iter().zip(&self.sigma).map(|(c, s)| c / s).collect();
        Ok(self.v.mul_vec(&scaled))
    }
}

/// One-sided Jacobi SVD of a matrix with at least as many rows as columns.
pub fn svd(a: &CMatrix) -> Svd {
    assert!(a.rows >= a.cols, "svd expects rows >= cols");
    let n = a.cols;
    let mut work = a.clone();
    let mut v = CMatrix::identity(n);
    for _ in 0..SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = work.col_norm_sqr(i);
                let beta = work.col_norm_sqr(j);
                let gamma = work.col_dot(i, j);
                let g = gamma.norm();
                if g == 0.0 || g <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut work, i, j, phase, c, s);
                rotate(&mut v, i, j, phase, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(usize, f64)> = (0..n).map(|i| (i, work.col_norm_sqr(i).sqrt())).collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let mut u = CMatrix::zeros(a.rows, n);
    let mut vs = CMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (dst, &(src, s)) in order.iter().enumerate() {
        sigma.push(s);
        for r in 0..a.rows {
            u[(r, dst)] = if s > 0.0 { work[(r, src)] / s } else { ZERO };
        }
        for r in 0..n {
            vs[(r, dst)] = v[(r, src)];
        }
    }
    Svd { u, sigma, v: vs }
}

/// Applies the plane rotation that zeroes the (i, j) column inner product,
/// after rotating column j by the conjugate phase.
fn rotate(m: &mut CMatrix, i: usize, j: usize, phase: Complex64, c: f64, s: f64) {
    let back = phase.conj();
    for r in 0..m.rows {
        let xi = m[(r, i)];
        let xj = m[(r, j)] * back;
        m[(r, i)] = xi * c - xj * s;
        m[(r, j)] = (xi * s + xj * c) * phase;
    }
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(a: &CMatrix) -> Complex64 {
    assert_eq!(a.rows, a.cols, "determinant of a non-square matrix");
    let n = a.rows;
    let mut m = a.clone();
    let mut acc = ONE;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[(x, col)].norm().total_cmp(&m[(y, col)].norm()))
            .expect("non-empty range");
        if m[(pivot, col)] == ZERO {
            return ZERO;
        }
        if pivot != col {
            for k in 0..n {
                let tmp = m[(col, k)];
                m[(col, k)] = m[(pivot, k)];
                m[(pivot, k)] = tmp;
            }
            acc = -acc;
        }
        let d = m[(col, col)];
        acc *= d;
        for r in col + 1..n {
            let f = m[(r, col)] / d;
            for k in col..n {
                let sub = f * m[(col, k)];
                m[(r, k)] -= sub;
            }
        }
    }
    acc
}

pub fn vec_norm(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Vandermonde matrix with entry (i, j) = `u_j^i`.
pub fn vandermonde(u: &[Complex64]) -> CMatrix {
    CMatrix::from_fn(u.len(), u.len(), |i, j| u[j].powu(i as u32))
}
