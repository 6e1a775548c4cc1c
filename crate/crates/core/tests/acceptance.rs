//! End-to-end acceptance gate: desk-scale Monte Carlo reproductions of the
//! reported size/power tables plus property-based checks on the solver, the
//! projector, the bootstrap, and the runtime scaling. Each test prints one
//! PASS/FAIL line; run with `--nocapture` to see them on success.

use nalgebra::{DMatrix, DVector};
use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use spectest::model::residuals;
use spectest::projection::build_projector;
use spectest::simulation::{
    gen_dgp, rep_seed, run_mc, time_profile, DgpId, DgpSpec, McCell, McConfig, TestKind,
};
use spectest::svm::{objective, train_nu_svc, train_ocsvm, ShiftedTrainingSet, SvmConfig};
use spectest::testing::{
    bootstrap_distribution, run_test, split, t_statistic, BandwidthPolicy, BootstrapConfig,
    EstimatorConfig, SplitPlan,
};
use spectest::{gram, median_heuristic, SvmVariant};

const LEVEL: f64 = 0.05;

fn mc_config(base_seed: u64) -> McConfig {
    McConfig {
        replications: 1000,
        bootstrap: 500,
        levels: vec![LEVEL],
        base_seed,
        ..McConfig::default()
    }
}

fn cell(test: TestKind, id: DgpId, q: usize, estimator: EstimatorConfig) -> McCell {
    McCell {
        test,
        dgp: DgpSpec {
            id,
            q,
            n: 400,
            c: 0.25,
            seed: 0,
        },
        estimator,
    }
}

fn rate_of(
    test: TestKind,
    id: DgpId,
    q: usize,
    estimator: EstimatorConfig,
    mode: &str,
    base_seed: u64,
) -> f64 {
    let cfg = mc_config(base_seed);
    let cells = [cell(test, id, q, estimator)];
    let report = run_mc(&cfg, &cells).expect("mc run");
    for d in &report.diagnostics {
        assert!(!d.flagged, "cell {}/{} flagged: {:?}", d.test, d.dgp, d.first_error);
    }
    report
        .rate(test, &cells[0].dgp, LEVEL, mode)
        .expect("rate present")
}

fn check_band(name: &str, value: f64, lo: f64, hi: f64) {
    let fmt = |v: f64| {
        if v == 0.0 || (v.abs() >= 1e-3 && v.abs() < 1e4) {
            format!("{v:.4}")
        } else {
            format!("{v:.2e}")
        }
    };
    let pass = value >= lo && value <= hi;
    println!(
        "{name}: {} in [{}, {}] -> {}",
        fmt(value),
        fmt(lo),
        fmt(hi),
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{name}: {} outside [{}, {}]", fmt(value), fmt(lo), fmt(hi));
}

#[test]
fn c01_nusvm_bootstrap_size_null() {
    let r = rate_of(TestKind::NuSvm, DgpId::Dgp1, 10, EstimatorConfig::Ols, "bootstrap", 7);
    check_band("size nu-SVM bootstrap, null q=10", r, 0.026, 0.066);
}

#[test]
fn c02_ocsvm_analytic_size_null() {
    let r = rate_of(TestKind::Ocsvm, DgpId::Dgp1, 10, EstimatorConfig::Ols, "analytic", 7);
    check_band("size OCSVM analytic, null q=10", r, 0.029, 0.069);
}

#[test]
fn c03_nusvm_bootstrap_power_quadratic() {
    let r = rate_of(TestKind::NuSvm, DgpId::Dgp4, 20, EstimatorConfig::Ols, "bootstrap", 7);
    check_band("power nu-SVM bootstrap, quadratic q=20", r, 0.786, 0.876);
}

#[test]
fn c04_ocsvm_bootstrap_power_bump() {
    let r = rate_of(TestKind::Ocsvm, DgpId::Dgp2, 10, EstimatorConfig::Ols, "bootstrap", 7);
    check_band("power OCSVM bootstrap, bump q=10", r, 0.685, 0.775);
}

#[test]
fn c05_power_ordering_svm_gp_kcm() {
    let cfg = mc_config(7);
    let ids = [DgpId::Dgp2, DgpId::Dgp4, DgpId::Dgp5];
    let tests = [TestKind::NuSvm, TestKind::Ocsvm, TestKind::Gp, TestKind::Kcm];
    let mut cells = Vec::new();
    for &id in &ids {
        for &t in &tests {
            cells.push(cell(t, id, 20, EstimatorConfig::Ols));
        }
    }
    let report = run_mc(&cfg, &cells).expect("mc run");
    let mut all_pass = true;
    for &id in &ids {
        let dgp = DgpSpec { id, q: 20, n: 400, c: 0.25, seed: 0 };
        let r = |t| report.rate(t, &dgp, LEVEL, "bootstrap").expect("rate");
        let (nusvm, ocsvm, gp, kcm) = (
            r(TestKind::NuSvm),
            r(TestKind::Ocsvm),
            r(TestKind::Gp),
            r(TestKind::Kcm),
        );
        let pass = nusvm.min(ocsvm) > gp && gp > kcm;
        all_pass &= pass;
        println!(
            "ordering {id} q=20: svm=({nusvm:.3}, {ocsvm:.3}) > gp={gp:.3} > kcm={kcm:.3} -> {}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    assert!(all_pass, "SVM > GP > KCM ordering violated");
}

#[test]
fn c06_baseline_sizes_null() {
    let gp = rate_of(TestKind::Gp, DgpId::Dgp1, 10, EstimatorConfig::Ols, "bootstrap", 7);
    check_band("size GP bootstrap, null q=10", gp, 0.027, 0.067);
    let kcm = rate_of(TestKind::Kcm, DgpId::Dgp1, 10, EstimatorConfig::Ols, "bootstrap", 7);
    check_band("size KCM bootstrap, null q=10 (undersized)", kcm, 0.0, 0.01);
}

#[test]
fn c07_lasso_nusvm_bootstrap_power() {
    let lasso = EstimatorConfig::Lasso { folds: 5, grid: None };
    let r = rate_of(TestKind::NuSvm, DgpId::Dgp2, 10, lasso, "bootstrap", 7);
    check_band("power nu-SVM bootstrap under lasso, bump q=10", r, 0.648, 0.738);
}

// ---------------------------------------------------------------------------
// Null distribution of n T^2

fn ks_p_value(sample: &mut [f64]) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let chi = ChiSquared::new(1.0).unwrap();
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = chi.cdf(x);
        d = d.max(((i + 1) as f64 / n - f).abs()).max((f - i as f64 / n).abs());
    }
    // asymptotic Kolmogorov tail with the small-sample correction
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1.0f64).powi(k as i32 - 1) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

#[test]
fn c08_null_statistic_is_chi_square() {
    let reps = 1000;
    let mut draws = Vec::with_capacity(reps);
    for rep in 0..reps {
        let seed = rep_seed(8_000, 0, rep as u64);
        let spec = DgpSpec { id: DgpId::Dgp1, q: 10, n: 400, c: 0.25, seed };
        let data = gen_dgp(&spec).expect("dgp");
        let plan = SplitPlan { train_fraction: 0.1, seed: seed ^ 0x5B17 };
        let res = run_test(
            &data,
            SvmVariant::Ocsvm,
            &EstimatorConfig::Ols,
            BandwidthPolicy::Median,
            &SvmConfig::default(),
            None,
            &plan,
            &[LEVEL],
        )
        .expect("test run");
        draws.push(res.chi_sq);
    }
    let p = ks_p_value(&mut draws);
    check_band("KS p-value of n T^2 against chi^2_1 (1000 null reps)", p, 0.01, 1.0);
}

// ---------------------------------------------------------------------------
// SMO vs projected-gradient oracle

struct GroupQp {
    q: DMatrix<f64>,
    groups: Vec<Vec<usize>>,
    sums: Vec<f64>,
    upper: f64,
}

/// Euclidean projection of `v` onto {0 <= a <= upper, sum_g a = s_g per group}
/// by bisection on the per-group shift.
fn project_feasible(qp: &GroupQp, v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    for (g, &target) in qp.groups.iter().zip(&qp.sums) {
        let mut lo = g.iter().map(|&i| v[i]).fold(f64::INFINITY, f64::min) - qp.upper - target - 1.0;
        let mut hi = g.iter().map(|&i| v[i]).fold(f64::NEG_INFINITY, f64::max) + target + 1.0;
        for _ in 0..200 {
            let lam = 0.5 * (lo + hi);
            let s: f64 = g.iter().map(|&i| (v[i] - lam).clamp(0.0, qp.upper)).sum();
            if s > target {
                lo = lam;
            } else {
                hi = lam;
            }
        }
        let lam = 0.5 * (lo + hi);
        for &i in g {
            out[i] = (v[i] - lam).clamp(0.0, qp.upper);
        }
    }
    out
}

fn pairwise_kkt(qp: &GroupQp, alpha: &[f64]) -> f64 {
    let grad = &qp.q * DVector::from_column_slice(alpha);
    let eps = 1e-12 * qp.upper.max(1.0);
    let mut worst: f64 = 0.0;
    for g in &qp.groups {
        let mut up = f64::INFINITY;
        let mut low = f64::NEG_INFINITY;
        for &i in g {
            if alpha[i] < qp.upper - eps {
                up = up.min(grad[i]);
            }
            if alpha[i] > eps {
                low = low.max(grad[i]);
            }
        }
        if up.is_finite() && low.is_finite() {
            worst = worst.max(low - up);
        }
    }
    worst
}

/// FISTA with feasible-set projection and objective restarts; stops on a
/// pairwise KKT gap well below the comparison tolerance.
fn pg_oracle(qp: &GroupQp) -> Vec<f64> {
    let n = qp.q.nrows();
    let mut a: Vec<f64> = vec![0.0; n];
    for (g, &s) in qp.groups.iter().zip(&qp.sums) {
        for &i in g {
            a[i] = s / g.len() as f64;
        }
    }
    a = project_feasible(qp, &a);
    // row-sum norm bounds the largest eigenvalue
    let lip = (0..n)
        .map(|i| (0..n).map(|j| qp.q[(i, j)].abs()).sum::<f64>())
        .fold(1e-12, f64::max);
    let step = 1.0 / lip;
    let mut y = a.clone();
    let mut t = 1.0f64;
    let mut prev_obj = objective(&qp.q, &a);
    for iter in 0..400_000 {
        let grad = &qp.q * DVector::from_column_slice(&y);
        let v: Vec<f64> = (0..n).map(|i| y[i] - step * grad[i]).collect();
        let a_next = project_feasible(qp, &v);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        y = (0..n)
            .map(|i| a_next[i] + mom * (a_next[i] - a[i]))
            .collect();
        t = t_next;
        a = a_next;
        if iter % 100 == 99 {
            let obj = objective(&qp.q, &a);
            if obj > prev_obj {
                // restart the momentum when the objective backslides
                y = a.clone();
                t = 1.0;
            }
            prev_obj = obj;
            if pairwise_kkt(qp, &a) <= 1e-9 {
                break;
            }
        }
    }
    a
}

fn scaled_q(k: &DMatrix<f64>, mags: &[f64], labels: Option<&[f64]>) -> DMatrix<f64> {
    let n = k.nrows();
    let scale: Vec<f64> = match labels {
        Some(ls) => mags.iter().zip(ls).map(|(m, l)| m * l).collect(),
        None => mags.to_vec(),
    };
    DMatrix::from_fn(n, n, |i, j| scale[i] * scale[j] * k[(i, j)])
}

#[test]
fn c09_smo_matches_projected_gradient_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let normal = StandardNormal;
    let cfg = SvmConfig { tol: 1e-8, max_passes: 2_000_000, ..SvmConfig::default() };
    let mut worst_obj: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    for inst in 0..50 {
        let n = 8 + (inst % 18); // 8..=25
        let points = DMatrix::from_fn(n, 3, |_, _| normal.sample(&mut rng));
        let raw: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let kspec = median_heuristic(&points).expect("bandwidth");

        if inst % 2 == 0 {
            let ts = ShiftedTrainingSet::one_class(points, &raw, cfg.shift_pad).unwrap();
            let dir = train_ocsvm(&ts, &kspec, &cfg).expect("ocsvm");
            let k = gram(&ts.points, &ts.points, &kspec).unwrap();
            let qp = GroupQp {
                q: scaled_q(&k, &ts.magnitudes, None),
                groups: vec![(0..n).collect()],
                sums: vec![1.0],
                upper: 1.0 / (cfg.nu * n as f64),
            };
            let oracle = pg_oracle(&qp);
            worst_obj = worst_obj
                .max((objective(&qp.q, &dir.dual_alphas) - objective(&qp.q, &oracle)).abs());
            worst_kkt = worst_kkt.max(pairwise_kkt(&qp, &dir.dual_alphas));
        } else {
            let fitted: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let ts = ShiftedTrainingSet::two_class(&points, &raw, &fitted, cfg.shift_pad).unwrap();
            let dir = train_nu_svc(&ts, &kspec, &cfg).expect("nu-svc");
            let labels = ts.labels.clone().unwrap();
            let l = ts.points.nrows();
            let k = gram(&ts.points, &ts.points, &kspec).unwrap();
            let pos: Vec<usize> = (0..l).filter(|&i| labels[i] > 0.0).collect();
            let neg: Vec<usize> = (0..l).filter(|&i| labels[i] < 0.0).collect();
            let qp = GroupQp {
                q: scaled_q(&k, &ts.magnitudes, Some(&labels)),
                groups: vec![pos, neg],
                sums: vec![cfg.nu / 2.0, cfg.nu / 2.0],
                upper: 1.0 / l as f64,
            };
            let oracle = pg_oracle(&qp);
            worst_obj = worst_obj
                .max((objective(&qp.q, &dir.dual_alphas) - objective(&qp.q, &oracle)).abs());
            worst_kkt = worst_kkt.max(pairwise_kkt(&qp, &dir.dual_alphas));
        }
    }
    check_band("SMO vs oracle, worst objective gap (50 instances)", worst_obj, 0.0, 1e-6);
    check_band("SMO solutions, worst KKT violation (50 instances)", worst_kkt, 0.0, 1e-6);
}

// ---------------------------------------------------------------------------
// Projector properties and dual-path equality

#[test]
fn c10_projector_properties() {
    let seed = 1010;
    let spec = DgpSpec { id: DgpId::Dgp1, q: 10, n: 400, c: 0.25, seed };
    let data = gen_dgp(&spec).expect("dgp");
    let plan = SplitPlan { train_fraction: 0.1, seed: seed ^ 0x5B17 };
    let (train, test) = split(&data, &plan).expect("split");

    let model = EstimatorConfig::Ols.fit(&train).expect("ols");
    let bundle = residuals(&model, &test).expect("residuals");
    let projector = build_projector(bundle.scores.clone()).expect("projector");
    let eps_p = projector.project(&bundle.residuals).expect("project");

    // idempotence
    let twice = projector.project(&eps_p).expect("project twice");
    let idem = (&twice - &eps_p).amax();
    check_band("projector idempotence, |P(Pe) - Pe|_inf", idem, 0.0, 1e-10);

    // annihilation of the score directions
    let resid_scale = eps_p.amax().max(1.0);
    let annihil = (bundle.scores.transpose() * &eps_p).amax() / resid_scale;
    check_band("projector annihilation, |G' e_p|_inf / |e_p|_inf", annihil, 0.0, 1e-8);

    // a direction learned on the train side
    let train_bundle = residuals(&model, &train).expect("train residuals");
    let train_projector = build_projector(train_bundle.scores.clone()).expect("train projector");
    let eps_p_train = train_projector.project(&train_bundle.residuals).expect("train project");
    let kspec = median_heuristic(&train.x).expect("bandwidth");
    let ts = ShiftedTrainingSet::one_class(train.x.clone(), eps_p_train.as_slice(), 0.1).unwrap();
    let dir = train_ocsvm(&ts, &kspec, &SvmConfig::default()).expect("ocsvm");
    let k_cross = gram(&test.x, &dir.support_points, &kspec).expect("cross gram");

    // sign and scale invariance of the t-statistic in the weights
    let base = t_statistic(&eps_p, &k_cross, &dir.weights).expect("stat");
    let flipped: Vec<f64> = dir.weights.iter().map(|w| -w).collect();
    let scaled: Vec<f64> = dir.weights.iter().map(|w| 3.7 * w).collect();
    let t_flip = t_statistic(&eps_p, &k_cross, &flipped).expect("stat");
    let t_scale = t_statistic(&eps_p, &k_cross, &scaled).expect("stat");
    let sign_gap = (t_flip.t_stat + base.t_stat)
        .abs()
        .max((t_flip.chi_sq - base.chi_sq).abs());
    let scale_gap = (t_scale.t_stat - base.t_stat).abs() / base.t_stat.abs();
    check_band("sign invariance, |T(-eta)| vs |T(eta)|", sign_gap, 0.0, 1e-10);
    check_band("scale invariance, T(c eta) vs T(eta)", scale_gap, 0.0, 1e-10);

    // projecting the residuals or the kernel columns gives the same statistic
    let k_proj = projector.project_columns(&k_cross).expect("project columns");
    let dual = t_statistic(&bundle.residuals, &k_proj, &dir.weights).expect("dual path");
    let rel = (dual.mu_hat - base.mu_hat).abs() / base.mu_hat.abs().max(1e-300);
    check_band("dual-path equality, relative mu gap", rel, 0.0, 1e-10);
}

// ---------------------------------------------------------------------------
// Bootstrap variance against the plug-in estimate

#[test]
fn c11_bootstrap_variance_matches_plugin() {
    let seed = 1111;
    let spec = DgpSpec { id: DgpId::Dgp1, q: 10, n: 2000, c: 0.25, seed };
    let data = gen_dgp(&spec).expect("dgp");
    let plan = SplitPlan { train_fraction: 0.1, seed: seed ^ 0x5B17 };
    let (train, test) = split(&data, &plan).expect("split");

    let model = EstimatorConfig::Ols.fit(&train).expect("ols");
    let train_bundle = residuals(&model, &train).expect("train residuals");
    let train_projector = build_projector(train_bundle.scores.clone()).expect("train projector");
    let eps_p_train = train_projector.project(&train_bundle.residuals).expect("train project");
    let kspec = median_heuristic(&train.x).expect("bandwidth");
    let ts = ShiftedTrainingSet::one_class(train.x.clone(), eps_p_train.as_slice(), 0.1).unwrap();
    let dir = train_ocsvm(&ts, &kspec, &SvmConfig::default()).expect("ocsvm");

    let bundle = residuals(&model, &test).expect("test residuals");
    let projector = build_projector(bundle.scores.clone()).expect("projector");
    let eps_p = projector.project(&bundle.residuals).expect("project");
    let k_cross = gram(&test.x, &dir.support_points, &kspec).expect("cross gram");

    let stat = t_statistic(&eps_p, &k_cross, &dir.weights).expect("stat");
    let boot = BootstrapConfig { replications: 2000, seed: seed ^ 0xB007, ..BootstrapConfig::default() };
    let stats =
        bootstrap_distribution(&eps_p, &projector, &k_cross, &dir.weights, &boot).expect("boot");

    let b = stats.len() as f64;
    let mean = stats.iter().sum::<f64>() / b;
    let var = stats.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (b - 1.0);
    let ratio = var / (stat.sigma_hat * stat.sigma_hat);
    check_band("bootstrap variance over plug-in sigma^2 (n=2000, B=2000)", ratio, 0.90, 1.10);
}

// ---------------------------------------------------------------------------
// Runtime scaling

/// Per-rep times are milliseconds and the box suffers multi-second
/// contention bursts, so one long timing window is unusable: profile in many
/// short windows and fit the log-log slope on the per-n median window.
fn median_filtered_exponent(test: TestKind, bootstrap: usize) -> f64 {
    let grid = [200usize, 400, 800];
    let cfg = McConfig { bootstrap, levels: vec![LEVEL], base_seed: 12, ..McConfig::default() };
    let mut windows = vec![Vec::new(); grid.len()];
    for _ in 0..16 {
        let profile = time_profile(&[test], &grid, 5, 10, &cfg).expect("profile");
        for (w, row) in windows.iter_mut().zip(&profile.rows) {
            w.push(row.seconds);
        }
    }
    let medians: Vec<f64> = windows
        .iter_mut()
        .map(|w| {
            w.sort_by(|a, b| a.partial_cmp(b).unwrap());
            w[w.len() / 2]
        })
        .collect();
    let pts: Vec<(f64, f64)> = grid
        .iter()
        .zip(&medians)
        .map(|(&n, &s)| ((n as f64).ln(), s.ln()))
        .collect();
    let k = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / k,
        pts.iter().map(|p| p.1).sum::<f64>() / k,
    );
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[test]
fn c12_bootstrap_time_scaling() {
    // B large enough that the bootstrap stage towers over measurement noise
    let svm = median_filtered_exponent(TestKind::NuSvm, 2000);
    let gp = median_filtered_exponent(TestKind::Gp, 1000);
    check_band("time exponent, SVM bootstrap", svm, f64::NEG_INFINITY, 1.3);
    check_band("time exponent, GP baseline", gp, 1.7, f64::INFINITY);
}
