//! Estimation-effect-removing projector: the implicit matrix
//! `I - G (G'G)^{-1} G'` applied through linear solves of the d x d system.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

pub struct Projector {
    g: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    ridge: f64,
    d_effective: usize,
}

const COND_LIMIT: f64 = 1e12;

/// Builds the projector from an n x d score matrix. Ill-conditioned G'G
/// (condition estimate above 1e12) gets a ridge jitter of 1e-10 * trace/d,
/// recorded on the projector.
pub fn build_projector(g: DMatrix<f64>) -> Result<Projector> {
    let (n, d) = g.shape();
    if n <= d {
        return Err(Error::InvalidArgument(format!(
            "projector needs n > d (n={n}, d={d})"
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score matrix".into()));
    }
    if g.amax() == 0.0 {
        return Err(Error::InvalidArgument("all-zero score matrix".into()));
    }
    let mut gtg = g.transpose() * &g;
    let eig = gtg.symmetric_eigenvalues();
    let lmax = eig.iter().cloned().fold(f64::MIN, f64::max);
    let lmin = eig.iter().cloned().fold(f64::MAX, f64::min);
    let mut ridge = 0.0;
    if !(lmin > 0.0) || lmax / lmin > COND_LIMIT {
        ridge = 1e-10 * gtg.trace() / d as f64;
        for i in 0..d {
            gtg[(i, i)] += ridge;
        }
    }
    let chol = gtg
        .cholesky()
        .ok_or_else(|| Error::Singular("G'G not positive definite even after ridge".into()))?;
    Ok(Projector {
        g,
        chol,
        ridge,
        d_effective: d,
    })
}

impl Projector {
    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    pub fn d_effective(&self) -> usize {
        self.d_effective
    }

    /// Nonzero when a ridge jitter was needed for a near-singular G'G.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// `v - G solve(G'G, G'v)`.
    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "projector is {}-dimensional, vector has length {}",
                self.n(),
                v.len()
            )));
        }
        let coef = self.chol.solve(&(self.g.transpose() * v));
        Ok(v - &self.g * coef)
    }

    /// Projects every column of a kernel (or any) matrix.
    pub fn project_columns(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if k.nrows() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "projector is {}-dimensional, matrix has {} rows",
                self.n(),
                k.nrows()
            )));
        }
        let coef = self.chol.solve(&(self.g.transpose() * k));
        Ok(k - &self.g * coef)
    }
}
