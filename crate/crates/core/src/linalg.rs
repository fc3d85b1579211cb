//! Dense linear-algebra helpers shared by every estimator, plus the
//! floating-point operation counter used for cost comparisons.
//!
//! All estimator arithmetic on their update paths goes through
//! [`FlopCounter`], which charges the textbook dense cost of each operation:
//!
//! | operation                      | charged flops |
//! |--------------------------------|---------------|
//! | `(n×k)·(k×m)` product          | `2·n·k·m`     |
//! | `n×m` add / subtract           | `n·m`         |
//! | `n×n` SPD inverse (Cholesky)   | `n³`          |
//!
//! Transposes, copies and the symmetrization step are free.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::Tick;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default bound on the 1-norm condition number of an innovation covariance.
pub const DEFAULT_COND_BOUND: f64 = 1e12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopCounter {
    total: u64,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn reset(&mut self) {
        self.total = 0;
    }

    pub fn charge(&mut self, flops: u64) {
        self.total += flops;
    }

    pub fn mul(&mut self, a: &Mat, b: &Mat) -> Mat {
        self.total += 2 * (a.nrows() * a.ncols() * b.ncols()) as u64;
        a * b
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn mul_t(&mut self, a: &Mat, b: &Mat) -> Mat {
        self.total += 2 * (a.nrows() * a.ncols() * b.nrows()) as u64;
        a * b.transpose()
    }

    pub fn mul_vec(&mut self, a: &Mat, v: &Vector) -> Vector {
        self.total += 2 * (a.nrows() * a.ncols()) as u64;
        a * v
    }

    pub fn add(&mut self, a: &Mat, b: &Mat) -> Mat {
        self.total += (a.nrows() * a.ncols()) as u64;
        a + b
    }

    pub fn sub(&mut self, a: &Mat, b: &Mat) -> Mat {
        self.total += (a.nrows() * a.ncols()) as u64;
        a - b
    }

    pub fn add_vec(&mut self, a: &Vector, b: &Vector) -> Vector {
        self.total += a.len() as u64;
        a + b
    }

    pub fn sub_vec(&mut self, a: &Vector, b: &Vector) -> Vector {
        self.total += a.len() as u64;
        a - b
    }

    /// Inverts a symmetric positive-definite matrix, rejecting it when the
    /// 1-norm condition number exceeds `cond_bound`.
    pub fn spd_inverse(&mut self, s: &Mat, cond_bound: f64, tick: Tick) -> Result<Mat> {
        let n = s.nrows();
        self.total += (n * n * n) as u64;
        let inv = spd_inverse(s, cond_bound, tick)?;
        Ok(inv)
    }
}

/// Cholesky-based inverse with a condition-number guard.
pub fn spd_inverse(s: &Mat, cond_bound: f64, tick: Tick) -> Result<Mat> {
    if !s.is_square() {
        return Err(Error::Config(format!(
            "cannot invert non-square {}x{} matrix",
            s.nrows(),
            s.ncols()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(tick, "innovation covariance has non-finite entries"));
    }
    let chol = nalgebra::Cholesky::new(s.clone())
        .ok_or_else(|| Error::numerical(tick, "innovation covariance is not positive definite"))?;
    let inv = chol.inverse();
    let cond = norm_1(s) * norm_1(&inv);
    if !cond.is_finite() || cond > cond_bound {
        return Err(Error::numerical(
            tick,
            format!("innovation covariance condition number {cond:.3e} exceeds {cond_bound:.1e}"),
        ));
    }
    Ok(inv)
}

/// Maximum absolute column sum.
pub fn norm_1(m: &Mat) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Replaces `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().symmetric_eigenvalues().min()
}

/// Nearest positive semidefinite matrix in Frobenius norm: negative
/// eigenvalues of the symmetric input are set to zero.
pub fn project_psd(m: &Mat) -> Mat {
    let eig = m.clone().symmetric_eigen();
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let mut out = &eig.eigenvectors * Mat::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

/// Symmetric within `rel_tol` relative to the largest entry, and minimum
/// eigenvalue above `-eig_tol`.
pub fn is_symmetric_psd(m: &Mat, rel_tol: f64, eig_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    asym <= rel_tol * scale && min_eigenvalue(m) > -eig_tol
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}
