//! End-to-end SVM-based specification tests: sample splitting, train-side
//! direction learning, the test-side t-statistic, and analytic / multiplier
//! bootstrap inference.

use crate::error::{Error, Result};
use crate::kernel::{combine_columns, gram, median_heuristic, KernelSpec};
use crate::model::{
    default_lambda_grid, fit_lasso, fit_ols, residuals, Dataset, Estimator, FittedModel,
};
use crate::projection::{build_projector, Projector};
use crate::svm::{train_nu_svc, train_ocsvm, Direction, ShiftedTrainingSet, SvmConfig};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy)]
pub struct SplitPlan {
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Multiplier {
    Rademacher,
    Normal,
    Mammen,
    /// Deterministic all-ones draw; a test hook, not for inference.
    Unit,
}

#[derive(Debug, Clone, Copy)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub multiplier: Multiplier,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replications: 500,
            multiplier: Multiplier::Mammen,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvmVariant {
    #[serde(rename = "nusvm")]
    NuSvm,
    Ocsvm,
}

impl std::fmt::Display for SvmVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SvmVariant::NuSvm => write!(f, "nusvm"),
            SvmVariant::Ocsvm => write!(f, "ocsvm"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum BandwidthPolicy {
    /// Median pairwise distance of the train-split covariates.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub enum EstimatorConfig {
    Ols,
    Lasso {
        folds: usize,
        /// Defaults to a 50-point log grid from lambda_max down to 1e-3 of it.
        grid: Option<Vec<f64>>,
    },
}

impl EstimatorConfig {
    pub fn kind(&self) -> Estimator {
        match self {
            EstimatorConfig::Ols => Estimator::Ols,
            EstimatorConfig::Lasso { .. } => Estimator::Lasso,
        }
    }

    pub fn fit(&self, data: &Dataset) -> Result<FittedModel> {
        match self {
            EstimatorConfig::Ols => fit_ols(data),
            EstimatorConfig::Lasso { folds, grid } => {
                let owned;
                let g = match grid {
                    Some(g) => g.as_slice(),
                    None => {
                        owned = default_lambda_grid(data);
                        owned.as_slice()
                    }
                };
                fit_lasso(data, g, *folds)
            }
        }
    }
}

/// Statistic, p-values, critical values and diagnostics of one test run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestResult {
    pub t_stat: f64,
    pub chi_sq: f64,
    pub p_analytic: f64,
    pub p_bootstrap: Option<f64>,
    /// Level -> (1-alpha) quantile of |sqrt(n) mu*| over bootstrap draws.
    pub boot_crit: BTreeMap<String, f64>,
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub n_test: usize,
    pub support_size: usize,
    pub eta_l1: f64,
    pub variant: String,
    pub estimator: String,
    pub sigma: f64,
    pub nu: f64,
    pub seed: u64,
    pub rho: f64,
    pub fallback_support: bool,
    pub projector_ridge: f64,
}

impl TestResult {
    /// Observed bootstrap-scale statistic sqrt(n) mu_hat.
    pub fn sqrt_n_mu(&self) -> f64 {
        (self.n_test as f64).sqrt() * self.mu_hat
    }
}

/// Disjoint, exhaustive, seed-deterministic split into train and test.
pub fn split(data: &Dataset, plan: &SplitPlan) -> Result<(Dataset, Dataset)> {
    let n = data.n();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 rows to split".into()));
    }
    if !(plan.train_fraction > 0.0 && plan.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in (0,1), got {}",
            plan.train_fraction
        )));
    }
    let k = ((plan.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let d = data.q() + usize::from(data.intercept);
    let min_side = 2.max(d + 1);
    if k < min_side || n - k < min_side {
        return Err(Error::InvalidArgument(format!(
            "split sizes {k}/{} but both sides need at least {min_side} rows",
            n - k
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    idx.shuffle(&mut rng);
    Ok((data.subset(&idx[..k]), data.subset(&idx[k..])))
}

/// mu_hat = (1/n) sum_i eps_p[i] * sum_j eta_j K[i][j].
pub fn mean_projection(eps_p: &DVector<f64>, k_cross: &DMatrix<f64>, eta: &[f64]) -> Result<f64> {
    if eps_p.len() != k_cross.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} residuals but cross-Gram has {} rows",
            eps_p.len(),
            k_cross.nrows()
        )));
    }
    let w = combine_columns(k_cross, eta)?;
    Ok(eps_p.dot(&w) / eps_p.len() as f64)
}

/// The t-type statistic pieces computed from per-observation scores
/// s_i = eps_p[i] * sum_j eta_j K[i][j].
#[derive(Debug, Clone, Copy)]
pub struct StatSummary {
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub t_stat: f64,
    pub chi_sq: f64,
    pub p_analytic: f64,
    pub n: usize,
}

pub fn t_statistic(
    eps_p: &DVector<f64>,
    k_cross: &DMatrix<f64>,
    eta: &[f64],
) -> Result<StatSummary> {
    let n = eps_p.len();
    if n < 2 {
        return Err(Error::InvalidArgument("t-statistic needs n >= 2".into()));
    }
    if n != k_cross.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{n} residuals but cross-Gram has {} rows",
            k_cross.nrows()
        )));
    }
    let w = combine_columns(k_cross, eta)?;
    let scores: Vec<f64> = (0..n).map(|i| eps_p[i] * w[i]).collect();
    let mu = scores.iter().sum::<f64>() / n as f64;
    let ss: f64 = scores.iter().map(|s| (s - mu) * (s - mu)).sum();
    let sigma2 = ss / (n as f64 - 1.0);
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateData(
            "all projected scores are equal; zero-variance statistic".into(),
        ));
    }
    let sigma = sigma2.sqrt();
    let t = mu / sigma;
    let chi_sq = n as f64 * t * t;
    let p_analytic = chi_sq_upper_tail(chi_sq);
    Ok(StatSummary {
        mu_hat: mu,
        sigma_hat: sigma,
        t_stat: t,
        chi_sq,
        p_analytic,
        n,
    })
}

pub fn chi_sq_upper_tail(x: f64) -> f64 {
    let dist = ChiSquared::new(1.0).expect("chi^2_1");
    (1.0 - dist.cdf(x)).clamp(0.0, 1.0)
}

const MAMMEN_LOWER: f64 = -0.6180339887498949; // 0.5 (1 - sqrt 5)
const MAMMEN_UPPER: f64 = 1.618033988749895; // 0.5 (1 + sqrt 5)
const MAMMEN_P_LOWER: f64 = 0.7236067977499789; // (1 + sqrt 5) / (2 sqrt 5)

/// i.i.d. multipliers with mean 0 and variance 1.
pub fn draw_multipliers<R: Rng>(n: usize, kind: Multiplier, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| match kind {
        Multiplier::Rademacher => {
            if rng.gen::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
        Multiplier::Normal => rng.sample(StandardNormal),
        Multiplier::Mammen => {
            if rng.gen::<f64>() < MAMMEN_P_LOWER {
                MAMMEN_LOWER
            } else {
                MAMMEN_UPPER
            }
        }
        Multiplier::Unit => 1.0,
    })
}

/// Draws the bootstrap distribution of sqrt(n) mu*: the projected test
/// residuals are multiplied by the draw and re-projected (the multiplication
/// breaks the orthogonality to the scores, so the projection is re-applied).
///
/// Perturbing the projected residuals rather than the raw ones matters at
/// small train fractions: raw residuals still carry the train-side
/// estimation error x_i'(theta_hat - theta), which the projection removes
/// from the observed statistic but which would otherwise inflate the
/// bootstrap variance by roughly a factor 1 + d/m.
pub fn bootstrap_distribution(
    eps_p_test: &DVector<f64>,
    projector: &Projector,
    k_cross: &DMatrix<f64>,
    eta: &[f64],
    cfg: &BootstrapConfig,
) -> Result<Vec<f64>> {
    if cfg.replications < 1 {
        return Err(Error::InvalidArgument("need B >= 1".into()));
    }
    let n = eps_p_test.len();
    if n != projector.n() || n != k_cross.nrows() {
        return Err(Error::DimensionMismatch(
            "residuals, projector and cross-Gram disagree on n".into(),
        ));
    }
    let w = combine_columns(k_cross, eta)?;
    let sqrt_n = (n as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // multiply first, project afterwards; the draws are batched into column
    // blocks so each projection is one solve, while the block stays small
    // enough to be cache-resident at any n (keeps the cost linear in n)
    let b = cfg.replications;
    const BLOCK: usize = 64;
    let mut stats = Vec::with_capacity(b);
    let mut done = 0;
    while done < b {
        let width = BLOCK.min(b - done);
        let mut perturbed = DMatrix::zeros(n, width);
        for j in 0..width {
            let v = draw_multipliers(n, cfg.multiplier, &mut rng);
            for i in 0..n {
                perturbed[(i, j)] = eps_p_test[i] * v[i];
            }
        }
        let projected = projector.project_columns(&perturbed)?;
        for j in 0..width {
            stats.push(sqrt_n * projected.column(j).dot(&w) / n as f64);
        }
        done += width;
    }
    Ok(stats)
}

/// Two-sided bootstrap p-value: (1 + #{|stat*| >= |observed|}) / (B + 1).
/// The learned direction is only identified up to solver-dependent sign, so
/// the magnitude of sqrt(n) mu-hat is what carries evidence against the
/// null.
pub fn bootstrap_p_value(observed: f64, stats: &[f64]) -> f64 {
    let count = stats.iter().filter(|s| s.abs() >= observed.abs()).count();
    (1.0 + count as f64) / (stats.len() as f64 + 1.0)
}

/// Empirical (1-alpha) quantile of the |stat*| draws; the test rejects when
/// |sqrt(n) mu-hat| exceeds it.
pub fn bootstrap_critical_value(stats: &[f64], alpha: f64) -> f64 {
    let mut sorted: Vec<f64> = stats.iter().map(|s| s.abs()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let b = sorted.len();
    let rank = (((1.0 - alpha) * (b as f64 + 1.0)).ceil() as usize).clamp(1, b);
    sorted[rank - 1]
}

/// Full pipeline: split, fit on train, learn the direction, build the
/// test-side projector and statistic, then analytic and bootstrap inference.
#[allow(clippy::too_many_arguments)]
pub fn run_test(
    data: &Dataset,
    variant: SvmVariant,
    estimator: &EstimatorConfig,
    bandwidth: BandwidthPolicy,
    svm_cfg: &SvmConfig,
    boot_cfg: Option<&BootstrapConfig>,
    plan: &SplitPlan,
    levels: &[f64],
) -> Result<TestResult> {
    let (train, test) = split(data, plan).map_err(|e| e.at_stage("split"))?;

    let model = estimator.fit(&train).map_err(|e| e.at_stage("fit"))?;
    let train_bundle = residuals(&model, &train).map_err(|e| e.at_stage("fit"))?;

    let kspec = match bandwidth {
        BandwidthPolicy::Median => {
            median_heuristic(&train.x).map_err(|e| e.at_stage("bandwidth"))?
        }
        BandwidthPolicy::Fixed(s) => KernelSpec::new(s).map_err(|e| e.at_stage("bandwidth"))?,
    };

    let train_projector = build_projector(train_bundle.scores.clone())
        .map_err(|e| e.at_stage("train projector"))?;

    let direction = learn_direction(
        variant,
        &train,
        &model,
        &train_bundle.residuals,
        &train_projector,
        &kspec,
        svm_cfg,
    )
    .map_err(|e| e.at_stage("direction learning"))?;

    let test_bundle = residuals(&model, &test).map_err(|e| e.at_stage("test residuals"))?;
    let eps_hat = &test_bundle.residuals;
    let resid_var = variance(eps_hat.as_slice());
    let y_var = variance(test.y.as_slice()).max(1.0);
    if resid_var <= 1e-20 * y_var {
        return Err(Error::DegenerateData(
            "test residuals have (numerically) zero variance".into(),
        )
        .at_stage("test residuals"));
    }

    let test_projector =
        build_projector(test_bundle.scores.clone()).map_err(|e| e.at_stage("test projector"))?;
    let eps_p = test_projector
        .project(eps_hat)
        .map_err(|e| e.at_stage("test projector"))?;

    let k_cross = gram(&test.x, &direction.support_points, &kspec)
        .map_err(|e| e.at_stage("cross-Gram"))?;

    let stat = t_statistic(&eps_p, &k_cross, &direction.weights)
        .map_err(|e| e.at_stage("statistic"))?;

    let mut p_bootstrap = None;
    let mut boot_crit = BTreeMap::new();
    if let Some(bc) = boot_cfg {
        let stats = bootstrap_distribution(&eps_p, &test_projector, &k_cross, &direction.weights, bc)
            .map_err(|e| e.at_stage("bootstrap"))?;
        let observed = (stat.n as f64).sqrt() * stat.mu_hat;
        p_bootstrap = Some(bootstrap_p_value(observed, &stats));
        for &alpha in levels {
            boot_crit.insert(format!("{alpha}"), bootstrap_critical_value(&stats, alpha));
        }
    }

    Ok(TestResult {
        t_stat: stat.t_stat,
        chi_sq: stat.chi_sq,
        p_analytic: stat.p_analytic,
        p_bootstrap,
        boot_crit,
        mu_hat: stat.mu_hat,
        sigma_hat: stat.sigma_hat,
        n_test: stat.n,
        support_size: direction.support_indices.len(),
        eta_l1: direction.eta_l1(),
        variant: variant.to_string(),
        estimator: estimator.kind().to_string(),
        sigma: kspec.bandwidth(),
        nu: svm_cfg.nu,
        seed: plan.seed,
        rho: direction.rho,
        fallback_support: direction.fallback_support,
        projector_ridge: test_projector.ridge(),
    })
}

fn learn_direction(
    variant: SvmVariant,
    train: &Dataset,
    model: &FittedModel,
    train_residuals: &DVector<f64>,
    train_projector: &Projector,
    kspec: &KernelSpec,
    svm_cfg: &SvmConfig,
) -> Result<Direction> {
    match variant {
        SvmVariant::NuSvm => {
            // project the response and the fitted values with the train-side
            // projector, shift both jointly, and separate the two classes
            let fitted = model.predict(train)?;
            let y_p = train_projector.project(&train.y)?;
            let m_p = train_projector.project(&fitted)?;
            let ts = ShiftedTrainingSet::two_class(
                &train.x,
                y_p.as_slice(),
                m_p.as_slice(),
                svm_cfg.shift_pad,
            )?;
            train_nu_svc(&ts, kspec, svm_cfg)
        }
        SvmVariant::Ocsvm => {
            let eps_p = train_projector.project(train_residuals)?;
            let ts =
                ShiftedTrainingSet::one_class(train.x.clone(), eps_p.as_slice(), svm_cfg.shift_pad)?;
            train_ocsvm(&ts, kspec, svm_cfg)
        }
    }
}

fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() as f64 - 1.0)
}
