//! SVM-boosted specification tests for parametric regression models.
//!
//! The library fits a parametric null model, learns a discriminative RKHS
//! direction with a nu-SVM or one-class SVM on a held-out train split, and
//! tests whether the projected residual mean along that direction is zero,
//! with analytic (chi-squared) and multiplier-bootstrap calibration.
//! Reference ICM/KCM/GP V-statistic tests and a Monte-Carlo harness for
//! size/power tables are included, along with a CLI front end.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod kernel;
pub mod model;
pub mod projection;
pub mod simulation;
pub mod svm;
pub mod testing;

pub use error::{Error, Result};
pub use kernel::{eval_kernel, gram, median_heuristic, KernelSpec};
pub use model::{Dataset, Estimator, FittedModel, ResidualBundle};
pub use projection::{build_projector, Projector};
pub use svm::{train_nu_svc, train_ocsvm, Direction, ShiftedTrainingSet, SvmConfig};
pub use testing::{
    run_test, BandwidthPolicy, BootstrapConfig, EstimatorConfig, Multiplier, SplitPlan,
    SvmVariant, TestResult,
};
