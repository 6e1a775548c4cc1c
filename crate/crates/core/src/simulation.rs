//! Data-generating processes and the Monte-Carlo harness that turns repeated
//! test runs into size/power tables.

use crate::baselines::{gp_test, icm_test, kcm_test};
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::svm::SvmConfig;
use crate::testing::{
    run_test, BandwidthPolicy, BootstrapConfig, EstimatorConfig, Multiplier, SplitPlan, SvmVariant,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use cpu_time::ProcessTime;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DgpId {
    #[serde(rename = "1")]
    Dgp1,
    #[serde(rename = "2")]
    Dgp2,
    #[serde(rename = "3")]
    Dgp3,
    #[serde(rename = "4")]
    Dgp4,
    #[serde(rename = "5")]
    Dgp5,
    #[serde(rename = "1*")]
    Dgp1Star,
    #[serde(rename = "2*")]
    Dgp2Star,
    #[serde(rename = "3*")]
    Dgp3Star,
}

impl DgpId {
    pub fn is_star(self) -> bool {
        matches!(self, DgpId::Dgp1Star | DgpId::Dgp2Star | DgpId::Dgp3Star)
    }
}

impl std::fmt::Display for DgpId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DgpId::Dgp1 => "1",
            DgpId::Dgp2 => "2",
            DgpId::Dgp3 => "3",
            DgpId::Dgp4 => "4",
            DgpId::Dgp5 => "5",
            DgpId::Dgp1Star => "1*",
            DgpId::Dgp2Star => "2*",
            DgpId::Dgp3Star => "3*",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for DgpId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(DgpId::Dgp1),
            "2" => Ok(DgpId::Dgp2),
            "3" => Ok(DgpId::Dgp3),
            "4" => Ok(DgpId::Dgp4),
            "5" => Ok(DgpId::Dgp5),
            "1*" => Ok(DgpId::Dgp1Star),
            "2*" => Ok(DgpId::Dgp2Star),
            "3*" => Ok(DgpId::Dgp3Star),
            other => Err(Error::InvalidArgument(format!(
                "unknown DGP id {other:?} (expected 1-5 or 1*,2*,3*)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DgpSpec {
    pub id: DgpId,
    pub q: usize,
    pub n: usize,
    /// Deviation scale, 0.25 in all reported tables.
    pub c: f64,
    pub seed: u64,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.q < 1 {
            return Err(Error::InvalidArgument("q must be >= 1".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidArgument("n must be >= 2".into()));
        }
        if !(self.c >= 0.0) {
            return Err(Error::InvalidArgument("c must be >= 0".into()));
        }
        if !self.id.is_star() && self.sparsity() < 1 {
            return Err(Error::InvalidArgument(format!(
                "DGP {} needs floor(0.1 q) >= 1, got q = {}",
                self.id, self.q
            )));
        }
        Ok(())
    }

    /// p = floor(0.1 q), the number of leading ones in theta_0.
    pub fn sparsity(&self) -> usize {
        (0.1 * self.q as f64).floor() as usize
    }
}

/// Draws one dataset from the spec. Star DGPs carry an intercept and mixed
/// uniform/normal covariates; plain DGPs use X ~ N(0, I_q) and no intercept.
pub fn gen_dgp(spec: &DgpSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, q, c) = (spec.n, spec.q, spec.c);

    if spec.id.is_star() {
        // first half U(0,1); second half normal, with per-column variances
        // 1 + 0.1 (i - h) for the norm-deviation variants
        let h = q / 2;
        let x = DMatrix::from_fn(n, q, |_, j| {
            if j < h {
                rng.gen::<f64>()
            } else {
                let sd = if spec.id == DgpId::Dgp1Star {
                    1.0
                } else {
                    (1.0 + 0.1 * (j + 1 - h) as f64).sqrt()
                };
                sd * rng.sample::<f64, _>(StandardNormal)
            }
        });
        let eps = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta0 = 1.0;
        let y = DVector::from_fn(n, |i, _| {
            let row = x.row(i);
            let linear = beta0 + row.sum();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dev = match spec.id {
                DgpId::Dgp1Star => 0.0,
                DgpId::Dgp2Star => norm,
                DgpId::Dgp3Star => norm / (n as f64).sqrt(),
                _ => unreachable!(),
            };
            linear + dev + eps[i]
        });
        return Dataset::new(x, y, true);
    }

    let p = spec.sparsity();
    let x = DMatrix::from_fn(n, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let eps = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DVector::from_fn(n, |i, _| {
        let u: f64 = x.row(i).columns(0, p).sum();
        let dev = match spec.id {
            DgpId::Dgp1 => 0.0,
            DgpId::Dgp2 => c * (-u * u).exp(),
            DgpId::Dgp3 => 3.0 * c * (0.6 * std::f64::consts::PI * u).cos(),
            DgpId::Dgp4 => 0.5 * c * u * u,
            DgpId::Dgp5 => 0.5 * c * (0.25 * u).exp(),
            _ => unreachable!(),
        };
        u + dev + eps[i]
    });
    Dataset::new(x, y, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    #[serde(rename = "nusvm")]
    NuSvm,
    Ocsvm,
    Gp,
    Kcm,
    Icm,
}

impl TestKind {
    pub fn is_svm(self) -> bool {
        matches!(self, TestKind::NuSvm | TestKind::Ocsvm)
    }
}

impl std::fmt::Display for TestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TestKind::NuSvm => "nusvm",
            TestKind::Ocsvm => "ocsvm",
            TestKind::Gp => "gp",
            TestKind::Kcm => "kcm",
            TestKind::Icm => "icm",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for TestKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nusvm" => Ok(TestKind::NuSvm),
            "ocsvm" => Ok(TestKind::Ocsvm),
            "gp" => Ok(TestKind::Gp),
            "kcm" => Ok(TestKind::Kcm),
            "icm" => Ok(TestKind::Icm),
            other => Err(Error::InvalidArgument(format!(
                "unknown test variant {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub replications: usize,
    pub bootstrap: usize,
    pub levels: Vec<f64>,
    pub multiplier: Multiplier,
    pub workers: usize,
    pub base_seed: u64,
    pub train_fraction: f64,
    pub svm: SvmConfig,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            replications: 1000,
            bootstrap: 500,
            levels: vec![0.10, 0.05, 0.01],
            multiplier: Multiplier::Mammen,
            workers: 0, // rayon default
            base_seed: 0,
            train_fraction: 0.1,
            svm: SvmConfig::default(),
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::InvalidArgument("R must be >= 1".into()));
        }
        if self.bootstrap < 1 {
            return Err(Error::InvalidArgument("B must be >= 1".into()));
        }
        if self.levels.is_empty() || self.levels.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::InvalidArgument("levels must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// One table cell: a test applied to a DGP with a given estimator.
#[derive(Debug, Clone)]
pub struct McCell {
    pub test: TestKind,
    pub dgp: DgpSpec,
    pub estimator: EstimatorConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McRow {
    pub test: String,
    pub dgp: String,
    pub q: usize,
    pub n: usize,
    pub estimator: String,
    pub level: f64,
    /// "bootstrap" or "analytic".
    pub mode: String,
    pub rate: f64,
    pub mc_se: f64,
    pub reps: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McCellDiag {
    pub test: String,
    pub dgp: String,
    pub q: usize,
    pub n: usize,
    pub failures: usize,
    pub flagged: bool,
    pub first_error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub rows: Vec<McRow>,
    pub diagnostics: Vec<McCellDiag>,
    pub replications: usize,
    pub bootstrap: usize,
    pub base_seed: u64,
}

impl McReport {
    pub fn rate(&self, test: TestKind, dgp: &DgpSpec, level: f64, mode: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| {
                r.test == test.to_string()
                    && r.dgp == dgp.id.to_string()
                    && r.q == dgp.q
                    && r.n == dgp.n
                    && (r.level - level).abs() < 1e-12
                    && r.mode == mode
            })
            .map(|r| r.rate)
    }

    pub fn to_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(&mut w);
        wtr.write_record([
            "test", "dgp", "q", "n", "estimator", "level", "mode", "rate", "mc_se", "reps",
            "seconds",
        ])?;
        for r in &self.rows {
            wtr.write_record([
                r.test.clone(),
                r.dgp.clone(),
                r.q.to_string(),
                r.n.to_string(),
                r.estimator.clone(),
                r.level.to_string(),
                r.mode.clone(),
                r.rate.to_string(),
                r.mc_se.to_string(),
                r.reps.to_string(),
                r.seconds.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based replication seed: identical for any worker count.
pub fn rep_seed(base: u64, cell: u64, rep: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base).wrapping_add(cell)).wrapping_add(rep))
}

/// p-values for one replication: (bootstrap, analytic-if-available).
struct RepOutcome {
    p_bootstrap: f64,
    p_analytic: Option<f64>,
}

fn run_one_rep(cell: &McCell, cfg: &McConfig, cell_idx: u64, rep: u64) -> Result<RepOutcome> {
    let s = rep_seed(cfg.base_seed, cell_idx, rep);
    let data_spec = DgpSpec {
        seed: splitmix64(s),
        ..cell.dgp
    };
    let data = gen_dgp(&data_spec)?;
    let boot = BootstrapConfig {
        replications: cfg.bootstrap,
        multiplier: cfg.multiplier,
        seed: splitmix64(s ^ 0xB007),
    };
    match cell.test {
        TestKind::NuSvm | TestKind::Ocsvm => {
            let variant = if cell.test == TestKind::NuSvm {
                SvmVariant::NuSvm
            } else {
                SvmVariant::Ocsvm
            };
            let plan = SplitPlan {
                train_fraction: cfg.train_fraction,
                seed: splitmix64(s ^ 0x5B17),
            };
            let res = run_test(
                &data,
                variant,
                &cell.estimator,
                BandwidthPolicy::Median,
                &cfg.svm,
                Some(&boot),
                &plan,
                &cfg.levels,
            )?;
            Ok(RepOutcome {
                p_bootstrap: res.p_bootstrap.expect("bootstrap configured"),
                p_analytic: Some(res.p_analytic),
            })
        }
        TestKind::Gp => {
            let res = gp_test(&data, &cell.estimator, &boot)?;
            Ok(RepOutcome {
                p_bootstrap: res.p_bootstrap,
                p_analytic: None,
            })
        }
        TestKind::Kcm => {
            let res = kcm_test(&data, &cell.estimator, &boot)?;
            Ok(RepOutcome {
                p_bootstrap: res.p_bootstrap,
                p_analytic: None,
            })
        }
        TestKind::Icm => {
            let res = icm_test(&data, &cell.estimator, &boot)?;
            Ok(RepOutcome {
                p_bootstrap: res.p_bootstrap,
                p_analytic: None,
            })
        }
    }
}

/// Runs every cell for R replications and tabulates rejection rates per
/// level, for the bootstrap mode and (SVM tests) the analytic mode too.
pub fn run_mc(cfg: &McConfig, cells: &[McCell]) -> Result<McReport> {
    cfg.validate()?;
    for cell in cells {
        cell.dgp.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;

    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        let start = Instant::now();
        let outcomes: Vec<std::result::Result<RepOutcome, String>> = pool.install(|| {
            (0..cfg.replications)
                .into_par_iter()
                .map(|rep| {
                    run_one_rep(cell, cfg, ci as u64, rep as u64).map_err(|e| e.to_string())
                })
                .collect()
        });
        let seconds = start.elapsed().as_secs_f64();

        let failures = outcomes.iter().filter(|o| o.is_err()).count();
        let first_error = outcomes.iter().find_map(|o| o.as_ref().err().cloned());
        let ok: Vec<&RepOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
        let denom = ok.len().max(1) as f64;

        for &level in &cfg.levels {
            let mut modes: Vec<(&str, f64)> = Vec::new();
            let rej_boot = ok.iter().filter(|o| o.p_bootstrap <= level).count() as f64;
            modes.push(("bootstrap", rej_boot / denom));
            if cell.test.is_svm() {
                let rej_an = ok
                    .iter()
                    .filter(|o| o.p_analytic.map(|p| p <= level).unwrap_or(false))
                    .count() as f64;
                modes.push(("analytic", rej_an / denom));
            }
            for (mode, rate) in modes {
                rows.push(McRow {
                    test: cell.test.to_string(),
                    dgp: cell.dgp.id.to_string(),
                    q: cell.dgp.q,
                    n: cell.dgp.n,
                    estimator: cell.estimator.kind().to_string(),
                    level,
                    mode: mode.to_string(),
                    rate,
                    mc_se: (rate * (1.0 - rate) / denom).sqrt(),
                    reps: cfg.replications,
                    seconds,
                });
            }
        }
        diagnostics.push(McCellDiag {
            test: cell.test.to_string(),
            dgp: cell.dgp.id.to_string(),
            q: cell.dgp.q,
            n: cell.dgp.n,
            failures,
            flagged: failures as f64 > 0.01 * cfg.replications as f64,
            first_error,
        });
    }
    Ok(McReport {
        rows,
        diagnostics,
        replications: cfg.replications,
        bootstrap: cfg.bootstrap,
        base_seed: cfg.base_seed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeRow {
    pub test: String,
    pub n: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeProfile {
    pub rows: Vec<TimeRow>,
    /// Test name -> fitted exponent of seconds ~ n^e over the grid.
    pub exponents: BTreeMap<String, f64>,
}

/// Wall-clock of the bootstrap stage per test across an n grid (single
/// worker), with a log-log least-squares scaling exponent per test.
///
/// Each replication is run twice, once at the configured B and once at B = 1;
/// the recorded time is the difference, so the shared setup (estimation,
/// direction learning, Gram matrices) cancels and the exponent reflects the
/// bootstrap cost alone.
pub fn time_profile(
    tests: &[TestKind],
    n_grid: &[usize],
    reps: usize,
    q: usize,
    cfg: &McConfig,
) -> Result<TimeProfile> {
    if n_grid.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two grid points to fit an exponent".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut exponents = BTreeMap::new();
    for &test in tests {
        let mut logs = Vec::new();
        for &n in n_grid {
            let cell = McCell {
                test,
                dgp: DgpSpec {
                    id: DgpId::Dgp1,
                    q,
                    n,
                    c: 0.25,
                    seed: 0,
                },
                estimator: EstimatorConfig::Ols,
            };
            let cfg_one = McConfig { bootstrap: 1, ..cfg.clone() };
            // process CPU time, so co-tenant load cannot distort the exponent
            let start = ProcessTime::now();
            for rep in 0..reps {
                run_one_rep(&cell, cfg, 1_000_000 + n as u64, rep as u64)?;
            }
            let full = start.elapsed().as_secs_f64();
            let start = ProcessTime::now();
            for rep in 0..reps {
                run_one_rep(&cell, &cfg_one, 1_000_000 + n as u64, rep as u64)?;
            }
            let secs = (full - start.elapsed().as_secs_f64()).max(1e-9);
            rows.push(TimeRow {
                test: test.to_string(),
                n,
                seconds: secs,
            });
            logs.push(((n as f64).ln(), secs.max(1e-9).ln()));
        }
        exponents.insert(test.to_string(), slope(&logs));
    }
    Ok(TimeProfile { rows, exponents })
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}
