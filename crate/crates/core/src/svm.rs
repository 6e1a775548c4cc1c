//! nu-SVM and one-class-SVM duals solved by sequential minimal optimization
//! on the scaled kernel Q_ij = z_i z_j l_i l_j k(x_i, x_j).
//!
//! Both duals are instances of one SMO core: minimize (1/2) a'Qa subject to
//! a box constraint and per-group equality constraints (one group for OCSVM,
//! one per label for nu-SVC).

use crate::error::{Error, Result};
use crate::kernel::{gram, KernelSpec};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct SvmConfig {
    /// Trade-off between margin size and number of support vectors.
    pub nu: f64,
    /// KKT tolerance for the SMO stopping rule.
    pub tol: f64,
    /// Iteration cap for the SMO loop.
    pub max_passes: usize,
    /// Padding added to max |raw| when shifting values positive.
    pub shift_pad: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            nu: 0.5,
            tol: 1e-6,
            max_passes: 200_000,
            shift_pad: 0.1,
        }
    }
}

impl SvmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "nu must be in (0, 1], got {}",
                self.nu
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        Ok(())
    }
}

/// Training points with magnitudes shifted into the positive orthant.
#[derive(Debug, Clone)]
pub struct ShiftedTrainingSet {
    pub points: DMatrix<f64>,
    /// Shifted magnitudes, all > 0.
    pub magnitudes: Vec<f64>,
    /// +-1 labels, present for the two-class problem only.
    pub labels: Option<Vec<f64>>,
    /// The shift e = max |raw| + pad that was applied.
    pub shift: f64,
}

impl ShiftedTrainingSet {
    /// One-class set from raw (projected) residuals.
    pub fn one_class(points: DMatrix<f64>, raw: &[f64], pad: f64) -> Result<Self> {
        if points.nrows() != raw.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} points but {} magnitudes",
                points.nrows(),
                raw.len()
            )));
        }
        let (magnitudes, shift) = shift_values(raw, pad)?;
        Ok(Self {
            points,
            magnitudes,
            labels: None,
            shift,
        })
    }

    /// Two-class set: the nonparametric values (label +1) stacked over the
    /// parametric values (label -1), sharing the same covariate rows and
    /// shifted jointly.
    pub fn two_class(
        points: &DMatrix<f64>,
        nonparametric: &[f64],
        parametric: &[f64],
        pad: f64,
    ) -> Result<Self> {
        let n = points.nrows();
        if nonparametric.len() != n || parametric.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} points but {} / {} class values",
                nonparametric.len(),
                parametric.len()
            )));
        }
        let mut raw = Vec::with_capacity(2 * n);
        raw.extend_from_slice(nonparametric);
        raw.extend_from_slice(parametric);
        let (magnitudes, shift) = shift_values(&raw, pad)?;
        let mut stacked = DMatrix::zeros(2 * n, points.ncols());
        stacked.view_mut((0, 0), (n, points.ncols())).copy_from(points);
        stacked.view_mut((n, 0), (n, points.ncols())).copy_from(points);
        let mut labels = vec![1.0; n];
        labels.extend(std::iter::repeat(-1.0).take(n));
        Ok(Self {
            points: stacked,
            magnitudes,
            labels: Some(labels),
            shift,
        })
    }
}

/// `e = max |raw_i| + pad`; every shifted value `raw_i + e` is > 0.
pub fn shift_values(raw: &[f64], pad: f64) -> Result<(Vec<f64>, f64)> {
    if raw.is_empty() {
        return Err(Error::InvalidArgument("cannot shift an empty vector".into()));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite values in shift input".into()));
    }
    let e = raw.iter().fold(0.0f64, |m, v| m.max(v.abs())) + pad;
    Ok((raw.iter().map(|v| v + e).collect(), e))
}

/// Learned projection direction w = sum_j eta_j k(x_j, .).
#[derive(Debug, Clone)]
pub struct Direction {
    pub support_indices: Vec<usize>,
    /// Weights eta_j, indexed like `support_indices`.
    pub weights: Vec<f64>,
    /// Covariate rows of the support vectors, in index order.
    pub support_points: DMatrix<f64>,
    /// Margin offset, recovered from an unbounded support vector; diagnostic.
    pub rho: f64,
    /// Full dual vector.
    pub dual_alphas: Vec<f64>,
    /// True when thresholding left no support vector and the largest-alpha
    /// point was kept as a singleton.
    pub fallback_support: bool,
}

impl Direction {
    pub fn eta_l1(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }
}

// ---------------------------------------------------------------------------
// SMO core

pub(crate) struct SmoSolution {
    pub alpha: Vec<f64>,
    #[allow(dead_code)]
    pub iterations: usize,
}

/// Minimizes (1/2) a'Qa subject to 0 <= a_i <= upper and, for each group,
/// sum_{i in g} a_i fixed at its initial value. Maximal-violating-pair
/// selection, lowest index on ties, so the run is deterministic.
pub(crate) fn smo_solve(
    q: &DMatrix<f64>,
    mut alpha: Vec<f64>,
    groups: &[Vec<usize>],
    upper: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SmoSolution> {
    let n = q.nrows();
    debug_assert_eq!(alpha.len(), n);
    let targets: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().map(|&i| alpha[i]).sum())
        .collect();
    let mut grad: DVector<f64> = q * DVector::from_column_slice(&alpha);
    let bound_eps = 1e-12 * upper.max(1.0);

    for iter in 0..max_iter {
        // most violating pair across all groups
        let mut best: Option<(usize, usize, f64)> = None;
        for g in groups {
            let mut i_up: Option<usize> = None; // alpha < upper, minimal gradient
            let mut j_low: Option<usize> = None; // alpha > 0, maximal gradient
            for &i in g {
                if alpha[i] < upper - bound_eps
                    && i_up.map_or(true, |u| grad[i] < grad[u])
                {
                    i_up = Some(i);
                }
                if alpha[i] > bound_eps && j_low.map_or(true, |l| grad[i] > grad[l]) {
                    j_low = Some(i);
                }
            }
            if let (Some(i), Some(j)) = (i_up, j_low) {
                let viol = grad[j] - grad[i];
                if best.map_or(true, |(_, _, v)| viol > v) {
                    best = Some((i, j, viol));
                }
            }
        }
        let Some((i, j, viol)) = best else {
            return finish(alpha, groups, &targets, upper, iter);
        };
        if viol <= tol {
            return finish(alpha, groups, &targets, upper, iter);
        }
        // move t from j to i along the equality-feasible segment
        let curvature = q[(i, i)] + q[(j, j)] - 2.0 * q[(i, j)];
        let t_max = (upper - alpha[i]).min(alpha[j]);
        let t = if curvature > 1e-300 {
            (viol / curvature).min(t_max)
        } else {
            t_max
        };
        alpha[i] += t;
        alpha[j] -= t;
        for r in 0..n {
            grad[r] += t * (q[(r, i)] - q[(r, j)]);
        }
    }

    // report the final KKT gap
    let gap = kkt_violation(q, &alpha, groups, upper);
    Err(Error::NonConvergence(format!(
        "SMO hit the iteration cap with KKT gap {gap:.3e}"
    )))
}

fn finish(
    mut alpha: Vec<f64>,
    groups: &[Vec<usize>],
    targets: &[f64],
    upper: f64,
    iterations: usize,
) -> Result<SmoSolution> {
    // renormalize each group's sum exactly; drift is at round-off scale
    for (g, &target) in groups.iter().zip(targets) {
        let s: f64 = g.iter().map(|&i| alpha[i]).sum();
        if s > 0.0 && target > 0.0 {
            let scale = target / s;
            for &i in g {
                alpha[i] = (alpha[i] * scale).clamp(0.0, upper);
            }
        }
    }
    Ok(SmoSolution { alpha, iterations })
}

/// Largest violation of the pairwise KKT optimality conditions.
pub(crate) fn kkt_violation(
    q: &DMatrix<f64>,
    alpha: &[f64],
    groups: &[Vec<usize>],
    upper: f64,
) -> f64 {
    let grad = q * DVector::from_column_slice(alpha);
    let bound_eps = 1e-12 * upper.max(1.0);
    let mut worst: f64 = 0.0;
    for g in groups {
        let mut up = f64::INFINITY;
        let mut low = f64::NEG_INFINITY;
        for &i in g {
            if alpha[i] < upper - bound_eps {
                up = up.min(grad[i]);
            }
            if alpha[i] > bound_eps {
                low = low.max(grad[i]);
            }
        }
        if up.is_finite() && low.is_finite() {
            worst = worst.max(low - up);
        }
    }
    worst
}

/// Dual objective 0.5 a' Q a for a given alpha.
pub fn objective(q: &DMatrix<f64>, alpha: &[f64]) -> f64 {
    let a = DVector::from_column_slice(alpha);
    0.5 * (q * &a).dot(&a)
}

const ALPHA_FLOOR_REL: f64 = 1e-8;

fn support_set(alpha: &[f64]) -> (Vec<usize>, bool) {
    let max_a = alpha.iter().cloned().fold(0.0f64, f64::max);
    let floor = ALPHA_FLOOR_REL * max_a;
    let idx: Vec<usize> = (0..alpha.len()).filter(|&i| alpha[i] > floor).collect();
    if idx.is_empty() {
        // keep the largest-alpha point as a singleton
        let best = (0..alpha.len())
            .max_by(|&a, &b| alpha[a].partial_cmp(&alpha[b]).unwrap())
            .unwrap();
        (vec![best], true)
    } else {
        (idx, false)
    }
}

fn rows(points: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), points.ncols(), |i, j| points[(idx[i], j)])
}

// ---------------------------------------------------------------------------
// One-class SVM

/// Solves min (1/2) sum a_i a_j e_i e_j k(x_i,x_j) with 0 <= a_i <= 1/(nu n),
/// sum a_i = 1, and extracts eta_j = a_j e_j over the support set.
pub fn train_ocsvm(
    ts: &ShiftedTrainingSet,
    kspec: &KernelSpec,
    cfg: &SvmConfig,
) -> Result<Direction> {
    cfg.validate()?;
    let n = ts.points.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument("OCSVM needs at least 2 points".into()));
    }
    if cfg.nu * (n as f64) < 1.0 {
        return Err(Error::Infeasible(format!(
            "OCSVM needs nu * n >= 1 (nu={}, n={n})",
            cfg.nu
        )));
    }
    if ts.magnitudes.iter().any(|&m| m <= 0.0) {
        return Err(Error::InvalidArgument(
            "shifted magnitudes must be positive".into(),
        ));
    }
    let k = gram(&ts.points, &ts.points, kspec)?;
    let q = scaled_kernel(&k, &ts.magnitudes, None);
    let upper = 1.0 / (cfg.nu * n as f64);

    // libsvm-style start: first floor(nu*n) points at the box, one fractional
    let mut alpha = vec![0.0; n];
    let full = (cfg.nu * n as f64).floor() as usize;
    for a in alpha.iter_mut().take(full.min(n)) {
        *a = upper;
    }
    let assigned = upper * full.min(n) as f64;
    if assigned < 1.0 && full < n {
        alpha[full] = 1.0 - assigned;
    }

    let groups = vec![(0..n).collect::<Vec<_>>()];
    let sol = smo_solve(&q, alpha, &groups, upper, cfg.tol, cfg.max_passes)?;

    let (support, fallback) = support_set(&sol.alpha);
    let weights: Vec<f64> = support
        .iter()
        .map(|&j| sol.alpha[j] * ts.magnitudes[j])
        .collect();
    let rho = recover_rho_one_class(&k, &sol.alpha, &ts.magnitudes, &support, upper);
    Ok(Direction {
        support_points: rows(&ts.points, &support),
        support_indices: support,
        weights,
        rho,
        dual_alphas: sol.alpha,
        fallback_support: fallback,
    })
}

fn recover_rho_one_class(
    k: &DMatrix<f64>,
    alpha: &[f64],
    mags: &[f64],
    support: &[usize],
    upper: f64,
) -> f64 {
    let decision = |i: usize| -> f64 {
        (0..alpha.len())
            .map(|j| alpha[j] * mags[j] * k[(i, j)])
            .sum()
    };
    let max_a = alpha.iter().cloned().fold(0.0f64, f64::max);
    let floor = ALPHA_FLOOR_REL * max_a;
    let unbounded: Vec<usize> = support
        .iter()
        .copied()
        .filter(|&i| alpha[i] > floor && alpha[i] < upper - 1e-12 * upper)
        .collect();
    let pick = if unbounded.is_empty() {
        support.to_vec()
    } else {
        unbounded
    };
    pick.iter().map(|&i| decision(i)).sum::<f64>() / pick.len() as f64
}

// ---------------------------------------------------------------------------
// nu-SVC

/// Standard nu-SVC dual in equality form: min (1/2) a'Qa with
/// Q_ij = z_i z_j l_i l_j k(x_i,x_j), 0 <= a_i <= 1/l, per-class sums nu/2.
/// Weights are eta_j = a_j z_j l_j over the support set.
pub fn train_nu_svc(
    ts: &ShiftedTrainingSet,
    kspec: &KernelSpec,
    cfg: &SvmConfig,
) -> Result<Direction> {
    cfg.validate()?;
    let labels = ts
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("nu-SVC needs labeled points".into()))?;
    let l = ts.points.nrows();
    if labels.len() != l {
        return Err(Error::DimensionMismatch("label / point count mismatch".into()));
    }
    let pos: Vec<usize> = (0..l).filter(|&i| labels[i] > 0.0).collect();
    let neg: Vec<usize> = (0..l).filter(|&i| labels[i] < 0.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument(
            "nu-SVC needs points from both classes".into(),
        ));
    }
    let nu_max = 2.0 * pos.len().min(neg.len()) as f64 / l as f64;
    if cfg.nu > nu_max + 1e-12 {
        return Err(Error::Infeasible(format!(
            "nu={} infeasible; class balance allows at most {nu_max}",
            cfg.nu
        )));
    }
    if ts.magnitudes.iter().any(|&m| m <= 0.0) {
        return Err(Error::InvalidArgument(
            "shifted magnitudes must be positive".into(),
        ));
    }
    let k = gram(&ts.points, &ts.points, kspec)?;
    let q = scaled_kernel(&k, &ts.magnitudes, Some(labels));
    let upper = 1.0 / l as f64;

    // per-class sum nu/2, filled box-first for a deterministic start
    let mut alpha = vec![0.0; l];
    for class in [&pos, &neg] {
        let mut remaining = cfg.nu / 2.0;
        for &i in class.iter() {
            let take = remaining.min(upper);
            alpha[i] = take;
            remaining -= take;
            if remaining <= 0.0 {
                break;
            }
        }
        if remaining > 1e-12 {
            return Err(Error::Infeasible(format!(
                "cannot place per-class dual mass {:.3e}",
                cfg.nu / 2.0
            )));
        }
    }

    let groups = vec![pos, neg];
    let sol = smo_solve(&q, alpha, &groups, upper, cfg.tol, cfg.max_passes)?;

    let (support, fallback) = support_set(&sol.alpha);
    let weights: Vec<f64> = support
        .iter()
        .map(|&j| sol.alpha[j] * ts.magnitudes[j] * labels[j])
        .collect();
    let rho = recover_rho_two_class(&k, &sol.alpha, &ts.magnitudes, labels, upper);
    Ok(Direction {
        support_points: rows(&ts.points, &support),
        support_indices: support,
        weights,
        rho,
        dual_alphas: sol.alpha,
        fallback_support: fallback,
    })
}

fn recover_rho_two_class(
    k: &DMatrix<f64>,
    alpha: &[f64],
    mags: &[f64],
    labels: &[f64],
    upper: f64,
) -> f64 {
    let decision = |i: usize| -> f64 {
        (0..alpha.len())
            .map(|j| alpha[j] * mags[j] * labels[j] * k[(i, j)])
            .sum()
    };
    let max_a = alpha.iter().cloned().fold(0.0f64, f64::max);
    let floor = ALPHA_FLOOR_REL * max_a;
    let mean_decision = |sign: f64| -> Option<f64> {
        let pick: Vec<usize> = (0..alpha.len())
            .filter(|&i| {
                labels[i] == sign && alpha[i] > floor && alpha[i] < upper - 1e-12 * upper
            })
            .collect();
        if pick.is_empty() {
            None
        } else {
            Some(pick.iter().map(|&i| decision(i)).sum::<f64>() / pick.len() as f64)
        }
    };
    match (mean_decision(1.0), mean_decision(-1.0)) {
        (Some(fp), Some(fm)) => (fp - fm) / 2.0,
        _ => 0.0,
    }
}

fn scaled_kernel(k: &DMatrix<f64>, mags: &[f64], labels: Option<&[f64]>) -> DMatrix<f64> {
    let n = k.nrows();
    let scale: Vec<f64> = match labels {
        Some(ls) => mags.iter().zip(ls).map(|(m, l)| m * l).collect(),
        None => mags.to_vec(),
    };
    DMatrix::from_fn(n, n, |i, j| scale[i] * scale[j] * k[(i, j)])
}
