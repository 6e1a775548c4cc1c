//! Linear-model fitting (OLS and LASSO), residuals and score matrices.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Ols,
    Lasso,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Estimator::Ols => write!(f, "ols"),
            Estimator::Lasso => write!(f, "lasso"),
        }
    }
}

/// Covariate matrix plus response vector; the unit of ingestion and splitting.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub intercept: bool,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, intercept: bool) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "covariates have {} rows but response has length {}",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entries in data".into()));
        }
        if intercept && x.nrows() <= x.ncols() + 1 {
            return Err(Error::InvalidArgument(format!(
                "need n > q + 1 for intercept-augmented fitting (n={}, q={})",
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(Self { x, y, intercept })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    /// Covariates with a leading ones column when the model has an intercept.
    pub fn design(&self) -> DMatrix<f64> {
        if self.intercept {
            let n = self.n();
            let mut d = DMatrix::zeros(n, self.q() + 1);
            for i in 0..n {
                d[(i, 0)] = 1.0;
            }
            d.view_mut((0, 1), (n, self.q())).copy_from(&self.x);
            d
        } else {
            self.x.clone()
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let x = DMatrix::from_fn(idx.len(), self.q(), |i, j| self.x[(idx[i], j)]);
        let y = DVector::from_fn(idx.len(), |i, _| self.y[idx[i]]);
        Dataset {
            x,
            y,
            intercept: self.intercept,
        }
    }
}

/// Coefficients in design order (intercept first when present).
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub coeffs: DVector<f64>,
    pub intercept: bool,
    pub estimator: Estimator,
    pub lambda: f64,
}

impl FittedModel {
    pub fn predict(&self, data: &Dataset) -> Result<DVector<f64>> {
        let d = data.design();
        if d.ncols() != self.coeffs.len() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} coefficients, design has {} columns",
                self.coeffs.len(),
                d.ncols()
            )));
        }
        Ok(&d * &self.coeffs)
    }
}

/// Residual vector together with the score matrix G whose row i is the
/// (intercept-augmented) covariate row x_i.
#[derive(Debug, Clone)]
pub struct ResidualBundle {
    pub residuals: DVector<f64>,
    pub scores: DMatrix<f64>,
}

/// OLS via the normal equations, solved (never inverted) with a Cholesky
/// factorization of X'X.
pub fn fit_ols(data: &Dataset) -> Result<FittedModel> {
    let d = data.design();
    if d.nrows() < d.ncols() {
        return Err(Error::InvalidArgument(format!(
            "OLS needs n >= number of coefficients ({} < {})",
            d.nrows(),
            d.ncols()
        )));
    }
    let xtx = d.transpose() * &d;
    let xty = d.transpose() * &data.y;
    // an exactly collinear design can still factor numerically; reject on
    // the spectrum before trusting the solve
    let eig = xtx.symmetric_eigenvalues();
    let lmax = eig.iter().cloned().fold(f64::MIN, f64::max);
    let lmin = eig.iter().cloned().fold(f64::MAX, f64::min);
    if !(lmin > 1e-12 * lmax.max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular("design matrix is rank deficient".into()));
    }
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("design matrix is rank deficient".into()))?;
    let coeffs = chol.solve(&xty);
    // guard against a numerically semidefinite factorization slipping through
    let resid_inf = (d.transpose() * (&data.y - &d * &coeffs)).amax();
    let scale = xty.amax().max(1.0);
    if resid_inf > 1e-6 * scale {
        return Err(Error::Singular(format!(
            "normal equations poorly solved (residual {resid_inf:.3e})"
        )));
    }
    Ok(FittedModel {
        coeffs,
        intercept: data.intercept,
        estimator: Estimator::Ols,
        lambda: 0.0,
    })
}

/// Largest penalty with an all-zero solution: max_j |X_j'y| / n (on
/// intercept-centered data when applicable).
pub fn lasso_lambda_max(data: &Dataset) -> f64 {
    let (xc, yc, _, _) = centered(data);
    let n = data.n() as f64;
    (0..xc.ncols())
        .map(|j| (xc.column(j).dot(&yc) / n).abs())
        .fold(0.0, f64::max)
}

/// Default grid: 50 log-spaced points from lambda_max down to 1e-3 lambda_max.
pub fn default_lambda_grid(data: &Dataset) -> Vec<f64> {
    let lmax = lasso_lambda_max(data).max(f64::MIN_POSITIVE);
    let k = 50;
    (0..k)
        .map(|i| lmax * 1e-3f64.powf(i as f64 / (k - 1) as f64))
        .collect()
}

fn centered(data: &Dataset) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
    if data.intercept {
        let n = data.n() as f64;
        let x_mean = DVector::from_fn(data.q(), |j, _| data.x.column(j).sum() / n);
        let y_mean = data.y.sum() / n;
        let mut xc = data.x.clone();
        for j in 0..data.q() {
            for i in 0..data.n() {
                xc[(i, j)] -= x_mean[j];
            }
        }
        let yc = data.y.map(|v| v - y_mean);
        (xc, yc, x_mean, y_mean)
    } else {
        (
            data.x.clone(),
            data.y.clone(),
            DVector::zeros(data.q()),
            0.0,
        )
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Coordinate descent for (1/2n)||y - X theta||^2 + lambda ||theta||_1 on
/// already-centered data, warm-started from `theta`.
fn lasso_cd(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    theta: &mut DVector<f64>,
) -> Result<()> {
    let n = x.nrows() as f64;
    let q = x.ncols();
    let col_sq: Vec<f64> = (0..q).map(|j| x.column(j).norm_squared() / n).collect();
    let mut resid = y - x * &*theta;
    let max_sweeps = 10_000;
    let tol = 1e-10;
    for _ in 0..max_sweeps {
        let mut max_delta: f64 = 0.0;
        for j in 0..q {
            if col_sq[j] <= 0.0 {
                continue; // constant (degenerate) column stays at zero
            }
            let old = theta[j];
            let rho = x.column(j).dot(&resid) / n + col_sq[j] * old;
            let new = soft_threshold(rho, lambda) / col_sq[j];
            if new != old {
                let delta = new - old;
                resid -= x.column(j) * delta;
                theta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < tol {
            return Ok(());
        }
    }
    Err(Error::NonConvergence(format!(
        "coordinate descent did not converge at lambda={lambda}"
    )))
}

/// LASSO with k-fold cross-validated penalty selection over `lambda_grid`.
///
/// Folds are assigned by index stripe, so the fit is deterministic for a
/// given row order.
pub fn fit_lasso(data: &Dataset, lambda_grid: &[f64], folds: usize) -> Result<FittedModel> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    if lambda_grid.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::InvalidArgument("lambda must be finite and >= 0".into()));
    }
    let best_lambda = if lambda_grid.len() == 1 {
        lambda_grid[0]
    } else {
        if folds < 2 {
            return Err(Error::InvalidArgument("need at least 2 CV folds".into()));
        }
        if data.n() < folds {
            return Err(Error::InvalidArgument(format!(
                "n={} too small for {folds}-fold CV",
                data.n()
            )));
        }
        cross_validate_lambda(data, lambda_grid, folds)?
    };

    let (xc, yc, x_mean, y_mean) = centered(data);
    let mut theta = DVector::zeros(data.q());
    // warm-start path down to the selected penalty
    let mut path: Vec<f64> = lambda_grid.iter().copied().filter(|&l| l > best_lambda).collect();
    path.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for l in path {
        lasso_cd(&xc, &yc, l, &mut theta)?;
    }
    lasso_cd(&xc, &yc, best_lambda, &mut theta)?;

    let coeffs = if data.intercept {
        let b0 = y_mean - theta.dot(&x_mean);
        let mut c = DVector::zeros(data.q() + 1);
        c[0] = b0;
        c.rows_mut(1, data.q()).copy_from(&theta);
        c
    } else {
        theta
    };
    Ok(FittedModel {
        coeffs,
        intercept: data.intercept,
        estimator: Estimator::Lasso,
        lambda: best_lambda,
    })
}

fn cross_validate_lambda(data: &Dataset, grid: &[f64], folds: usize) -> Result<f64> {
    let n = data.n();
    let mut sorted_grid: Vec<f64> = grid.to_vec();
    sorted_grid.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cv_mse = vec![0.0f64; sorted_grid.len()];
    for f in 0..folds {
        let val_idx: Vec<usize> = (0..n).filter(|i| i % folds == f).collect();
        let fit_idx: Vec<usize> = (0..n).filter(|i| i % folds != f).collect();
        let fit = data.subset(&fit_idx);
        let val = data.subset(&val_idx);
        let (xc, yc, x_mean, y_mean) = centered(&fit);
        let mut theta = DVector::zeros(fit.q());
        for (gi, &l) in sorted_grid.iter().enumerate() {
            lasso_cd(&xc, &yc, l, &mut theta)?;
            let b0 = if fit.intercept {
                y_mean - theta.dot(&x_mean)
            } else {
                0.0
            };
            let pred = &val.x * &theta;
            let mse: f64 = val
                .y
                .iter()
                .zip(pred.iter())
                .map(|(yi, pi)| {
                    let e = yi - pi - b0;
                    e * e
                })
                .sum::<f64>()
                / val.n() as f64;
            cv_mse[gi] += mse / folds as f64;
        }
    }
    let best = cv_mse
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    Ok(sorted_grid[best])
}

/// Residuals and the score matrix for a fitted linear model.
pub fn residuals(model: &FittedModel, data: &Dataset) -> Result<ResidualBundle> {
    if model.intercept != data.intercept {
        return Err(Error::InvalidArgument(
            "model and data disagree on intercept".into(),
        ));
    }
    let scores = data.design();
    if scores.ncols() != model.coeffs.len() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} coefficients, data design has {} columns",
            model.coeffs.len(),
            scores.ncols()
        )));
    }
    let residuals = &data.y - &scores * &model.coeffs;
    Ok(ResidualBundle { residuals, scores })
}
