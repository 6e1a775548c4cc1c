//! Command-line front end: CSV ingestion, flag validation, and the
//! test / simulate / bench subcommands.

use crate::baselines::{gp_test, icm_test, kcm_test};
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::simulation::{
    run_mc, time_profile, DgpId, DgpSpec, McCell, McConfig, TestKind, TimeProfile,
};
use crate::svm::SvmConfig;
use crate::testing::{
    run_test, BandwidthPolicy, BootstrapConfig, EstimatorConfig, Multiplier, SplitPlan, SvmVariant,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde_json::Value;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DEGENERATE: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "spectest",
    version,
    about = "SVM-boosted specification tests for parametric regression models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one specification test on a CSV dataset.
    Test(TestArgs),
    /// Monte-Carlo size/power tables over simulated DGPs.
    Simulate(SimulateArgs),
    /// Wall-clock scaling of the tests across sample sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Ols,
    Lasso,
}

impl EstimatorArg {
    fn config(self) -> EstimatorConfig {
        match self {
            EstimatorArg::Ols => EstimatorConfig::Ols,
            EstimatorArg::Lasso => EstimatorConfig::Lasso {
                folds: 5,
                grid: None,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MultiplierArg {
    Mammen,
    Rademacher,
    Normal,
}

impl From<MultiplierArg> for Multiplier {
    fn from(m: MultiplierArg) -> Self {
        match m {
            MultiplierArg::Mammen => Multiplier::Mammen,
            MultiplierArg::Rademacher => Multiplier::Rademacher,
            MultiplierArg::Normal => Multiplier::Normal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Name of the response column; all other columns are covariates.
    #[arg(long)]
    pub response: String,
    #[arg(long, default_value = "nusvm")]
    pub variant: String,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Ols)]
    pub estimator: EstimatorArg,
    /// Fit an intercept term.
    #[arg(long, default_value_t = false)]
    pub intercept: bool,
    #[arg(long, default_value_t = 0.5)]
    pub nu: f64,
    /// "median" or a fixed positive bandwidth.
    #[arg(long, default_value = "median")]
    pub sigma: String,
    /// Bootstrap replications B (0 disables the bootstrap).
    #[arg(long, default_value_t = 500)]
    pub bootstrap: usize,
    #[arg(long, value_enum, default_value_t = MultiplierArg::Mammen)]
    pub multiplier: MultiplierArg,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.10, 0.05, 0.01])]
    pub levels: Vec<f64>,
    #[arg(long, default_value_t = 0.6)]
    pub train_frac: f64,
    /// Falls back to SPECTEST_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// DGP ids: 1-5, 1*, 2*, 3*.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["1".to_string()])]
    pub dgp: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![10usize])]
    pub q: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![400usize])]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec!["nusvm".to_string(), "ocsvm".to_string()])]
    pub tests: Vec<String>,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Ols)]
    pub estimator: EstimatorArg,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 500)]
    pub bootstrap: usize,
    #[arg(long, value_enum, default_value_t = MultiplierArg::Mammen)]
    pub multiplier: MultiplierArg,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.10, 0.05, 0.01])]
    pub levels: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.5)]
    pub nu: f64,
    #[arg(long, default_value_t = 0.25)]
    pub c: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// 0 lets the runtime pick.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec!["nusvm".to_string(), "kcm".to_string()])]
    pub tests: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![200usize, 400, 800])]
    pub n_grid: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 10)]
    pub q: usize,
    #[arg(long, default_value_t = 100)]
    pub bootstrap: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
}

/// Seed resolution: flag, then SPECTEST_SEED, then 0.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("SPECTEST_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map_err(|_| Error::InvalidArgument(format!("SPECTEST_SEED={v:?} is not a u64"))),
        Err(_) => Ok(0),
    }
}

/// Loads a headered CSV; the named response column becomes y, the remaining
/// columns (in header order) become X.
pub fn load_csv(path: &Path, response: &str) -> Result<Dataset> {
    load_csv_with_intercept(path, response, false)
}

pub fn load_csv_with_intercept(path: &Path, response: &str, intercept: bool) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: empty file or missing header",
            path.display()
        )));
    }
    let y_col = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "response column {response:?} not found; available: {}",
                headers.join(", ")
            ))
        })?;
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::InvalidArgument(format!(
                "row {}: {} cells but {} header columns",
                i + 2,
                record.len(),
                headers.len()
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!(
                    "row {}, column {:?}: cannot parse {cell:?} as a number",
                    i + 2,
                    headers[j]
                ))
            })?;
            if j == y_col {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let n = y.len();
    let q = headers.len() - 1;
    let x = DMatrix::from_row_slice(n, q, &x);
    Dataset::new(x, DVector::from_vec(y), intercept)
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => {
            std::fs::write(p, text)?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                out.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

/// Flattens a one-level JSON object (maps become prefixed columns) into a
/// two-line CSV: header then values.
fn json_to_flat_csv(value: &Value) -> Result<String> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::InvalidArgument("expected a JSON object".into()))?;
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for (k, v) in obj {
        match v {
            Value::Object(inner) => {
                for (ik, iv) in inner {
                    cols.push(format!("{k}_{ik}"));
                    vals.push(scalar_to_string(iv));
                }
            }
            other => {
                cols.push(k.clone());
                vals.push(scalar_to_string(other));
            }
        }
    }
    Ok(format!("{}\n{}\n", cols.join(","), vals.join(",")))
}

fn scalar_to_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn parse_bandwidth(sigma: &str) -> Result<BandwidthPolicy> {
    if sigma == "median" {
        return Ok(BandwidthPolicy::Median);
    }
    let v: f64 = sigma.parse().map_err(|_| {
        Error::InvalidArgument(format!(
            "--sigma must be \"median\" or a positive number, got {sigma:?}"
        ))
    })?;
    if !(v > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "--sigma must be positive, got {v}"
        )));
    }
    Ok(BandwidthPolicy::Fixed(v))
}

fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() || levels.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::InvalidArgument(
            "--levels must be a non-empty list in (0,1)".into(),
        ));
    }
    Ok(())
}

pub fn cmd_test(args: &TestArgs) -> Result<()> {
    validate_levels(&args.levels)?;
    let kind: TestKind = args.variant.parse()?;
    let bandwidth = parse_bandwidth(&args.sigma)?;
    if !(args.train_frac > 0.0 && args.train_frac < 1.0) {
        return Err(Error::InvalidArgument(
            "--train-frac must lie in (0,1)".into(),
        ));
    }
    let seed = resolve_seed(args.seed)?;
    let data = load_csv_with_intercept(&args.input, &args.response, args.intercept)?;
    let estimator = args.estimator.config();
    let boot = BootstrapConfig {
        replications: args.bootstrap,
        multiplier: args.multiplier.into(),
        seed,
    };

    let json = match kind {
        TestKind::NuSvm | TestKind::Ocsvm => {
            let variant = if kind == TestKind::NuSvm {
                SvmVariant::NuSvm
            } else {
                SvmVariant::Ocsvm
            };
            let svm_cfg = SvmConfig {
                nu: args.nu,
                ..SvmConfig::default()
            };
            let plan = SplitPlan {
                train_fraction: args.train_frac,
                seed,
            };
            let boot_opt = (args.bootstrap > 0).then_some(&boot);
            let res = run_test(
                &data,
                variant,
                &estimator,
                bandwidth,
                &svm_cfg,
                boot_opt,
                &plan,
                &args.levels,
            )?;
            serde_json::to_value(&res).expect("serializable result")
        }
        TestKind::Kcm => serde_json::to_value(kcm_test(&data, &estimator, &boot)?).unwrap(),
        TestKind::Gp => serde_json::to_value(gp_test(&data, &estimator, &boot)?).unwrap(),
        TestKind::Icm => serde_json::to_value(icm_test(&data, &estimator, &boot)?).unwrap(),
    };

    let text = match args.format {
        FormatArg::Json => format!("{}\n", serde_json::to_string_pretty(&json).unwrap()),
        FormatArg::Csv => json_to_flat_csv(&json)?,
    };
    emit(args.output.as_deref(), &text)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    validate_levels(&args.levels)?;
    let seed = resolve_seed(args.seed)?;
    let mut tests = Vec::new();
    for t in &args.tests {
        tests.push(t.parse::<TestKind>()?);
    }
    let mut dgps = Vec::new();
    for d in &args.dgp {
        dgps.push(d.parse::<DgpId>()?);
    }
    let cfg = McConfig {
        replications: args.reps,
        bootstrap: args.bootstrap,
        levels: args.levels.clone(),
        multiplier: args.multiplier.into(),
        workers: args.workers,
        base_seed: seed,
        train_fraction: args.train_frac,
        svm: SvmConfig {
            nu: args.nu,
            ..SvmConfig::default()
        },
    };
    let mut cells = Vec::new();
    for &test in &tests {
        for &id in &dgps {
            for &q in &args.q {
                for &n in &args.n {
                    cells.push(McCell {
                        test,
                        dgp: DgpSpec {
                            id,
                            q,
                            n,
                            c: args.c,
                            seed: 0,
                        },
                        estimator: args.estimator.config(),
                    });
                }
            }
        }
    }
    let report = run_mc(&cfg, &cells)?;
    let text = match args.format {
        FormatArg::Json => format!("{}\n", serde_json::to_string_pretty(&report).unwrap()),
        FormatArg::Csv => {
            let mut buf = Vec::new();
            report.to_csv(&mut buf)?;
            String::from_utf8(buf).expect("csv is utf-8")
        }
    };
    emit(args.output.as_deref(), &text)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let mut tests = Vec::new();
    for t in &args.tests {
        tests.push(t.parse::<TestKind>()?);
    }
    if args.reps < 1 {
        return Err(Error::InvalidArgument("--reps must be >= 1".into()));
    }
    let cfg = McConfig {
        bootstrap: args.bootstrap,
        base_seed: seed,
        workers: 1,
        ..Default::default()
    };
    let profile: TimeProfile = time_profile(&tests, &args.n_grid, args.reps, args.q, &cfg)?;
    let text = match args.format {
        FormatArg::Json => format!("{}\n", serde_json::to_string_pretty(&profile).unwrap()),
        FormatArg::Csv => {
            let mut s = String::from("test,n,seconds\n");
            for r in &profile.rows {
                s.push_str(&format!("{},{},{}\n", r.test, r.n, r.seconds));
            }
            for (t, e) in &profile.exponents {
                s.push_str(&format!("{t},exponent,{e}\n"));
            }
            s
        }
    };
    emit(args.output.as_deref(), &text)
}

/// Maps an error to the documented exit code.
pub fn exit_code_for(err: &Error) -> i32 {
    match err.root() {
        Error::DegenerateData(_) => EXIT_DEGENERATE,
        Error::NonConvergence(_) => EXIT_NONCONVERGENCE,
        _ => EXIT_USAGE,
    }
}

/// Parses argv and dispatches; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // keep clap's rendered help/version on stdout semantics
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                EXIT_OK
            } else {
                EXIT_USAGE
            };
        }
    };
    let result = match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
