//! Gaussian kernel evaluation, median-heuristic bandwidth selection and
//! Gram / cross-Gram matrix construction.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Gaussian kernel `k(x, x') = exp(-||x - x'||^2 / sigma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    bandwidth: f64,
}

impl KernelSpec {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "kernel bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

pub fn eval_kernel(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "kernel arguments have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let sq: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((-sq / spec.bandwidth).exp())
}

/// Median of the n(n-1)/2 pairwise Euclidean distances (i < j).
///
/// An even-length list uses the midpoint of the two central order statistics.
pub fn median_heuristic(x: &DMatrix<f64>) -> Result<KernelSpec> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "median heuristic needs at least 2 points, got {n}"
        )));
    }
    let sq_norms: Vec<f64> = (0..n).map(|i| x.row(i).norm_squared()).collect();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let dot = x.row(i).dot(&x.row(j));
            // expanded form, clamped against negative round-off
            let sq = (sq_norms[i] + sq_norms[j] - 2.0 * dot).max(0.0);
            dists.push(sq.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median <= 0.0 {
        return Err(Error::DegenerateData(
            "median pairwise distance is zero (points coincide)".into(),
        ));
    }
    KernelSpec::new(median)
}

/// Cross-Gram matrix `values[i][j] = k(a_i, b_j)`.
pub fn gram(a: &DMatrix<f64>, b: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "gram point sets have {} and {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    let a_sq: Vec<f64> = (0..a.nrows()).map(|i| a.row(i).norm_squared()).collect();
    let b_sq: Vec<f64> = (0..b.nrows()).map(|j| b.row(j).norm_squared()).collect();
    // cross terms in one pass: D_ij = |a_i|^2 + |b_j|^2 - 2 a_i.b_j
    let cross = a * b.transpose();
    let mut out = DMatrix::zeros(a.nrows(), b.nrows());
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            let sq = (a_sq[i] + b_sq[j] - 2.0 * cross[(i, j)]).max(0.0);
            out[(i, j)] = (-sq / spec.bandwidth()).exp();
        }
    }
    Ok(out)
}

/// Gram-vector combination `w = K eta` used by the SVM statistic:
/// `w_i = sum_j eta_j k(x_i, s_j)`.
pub fn combine_columns(k_cross: &DMatrix<f64>, eta: &[f64]) -> Result<DVector<f64>> {
    if k_cross.ncols() != eta.len() {
        return Err(Error::DimensionMismatch(format!(
            "cross-Gram has {} columns but {} weights given",
            k_cross.ncols(),
            eta.len()
        )));
    }
    Ok(k_cross * DVector::from_column_slice(eta))
}
