//! Regularized Gram matrix `lambda I + sum phi phi^T` with an incrementally
//! maintained inverse.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Rank-one updates between full refactorizations of the inverse.
pub const REFACTOR_EVERY: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    lambda: f64,
    mat: DMatrix<f64>,
    inv: DMatrix<f64>,
    since_refactor: usize,
    updates: usize,
}

impl Covariance {
    pub fn new(d: usize, lambda: f64) -> Self {
        assert!(lambda > 0.0, "ridge regularizer must be positive");
        Covariance {
            lambda,
            mat: DMatrix::identity(d, d) * lambda,
            inv: DMatrix::identity(d, d) / lambda,
            since_refactor: 0,
            updates: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inv
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// `Lambda += phi phi^T`, inverse updated by Sherman-Morrison.
    pub fn rank_one_update(&mut self, phi: &[f64]) -> Result<()> {
        let x = DVector::from_column_slice(phi);
        self.mat.ger(1.0, &x, &x, 1.0);
        let u = &self.inv * &x;
        let denom = 1.0 + x.dot(&u);
        self.inv.ger(-1.0 / denom, &u, &u, 1.0);
        self.updates += 1;
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor()?;
        }
        Ok(())
    }

    /// Recomputes the inverse from a Cholesky factorization of the matrix.
    pub fn refactor(&mut self) -> Result<()> {
        let chol = self
            .mat
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite(self.updates))?;
        self.inv = chol.inverse();
        self.since_refactor = 0;
        Ok(())
    }

    /// `phi^T Lambda^{-1} phi`.
    pub fn quad_inv(&self, phi: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for (i, &pi) in phi.iter().enumerate().take(d) {
            let row: f64 = phi.iter().enumerate().take(d).map(|(j, &pj)| self.inv[(i, j)] * pj).sum();
            acc += pi * row;
        }
        acc.max(0.0)
    }

    /// `Lambda^{-1} b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let v = &self.inv * DVector::from_column_slice(b);
        v.iter().copied().collect()
    }

    /// Frobenius norm of `Lambda Lambda^{-1} - I`.
    pub fn inverse_residual(&self) -> f64 {
        let d = self.dim();
        (&self.mat * &self.inv - DMatrix::<f64>::identity(d, d)).norm()
    }

    pub fn log_det(&self) -> Result<f64> {
        let chol = self
            .mat
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite(self.updates))?;
        Ok(2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>())
    }

    /// Row-major copy of the matrix.
    pub fn matrix_rows(&self) -> Vec<Vec<f64>> {
        rows(&self.mat)
    }
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
