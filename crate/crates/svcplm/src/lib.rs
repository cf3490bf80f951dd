//! Estimation and inference for semiparametric varying-coefficient
//! partially linear models with error-prone linear covariates.
//!
//! The model relates a response `Y` to linear covariates `Z = (xi', W')'`
//! and varying-coefficient covariates `X` indexed by a scalar `U`:
//!
//! ```text
//! Y   = beta' xi + theta' W + alpha'(U) X + eps,
//! eta = xi(V) + e,
//! ```
//!
//! where `xi = E(eta | V)` is unobserved and recovered from the surrogate
//! `eta` and the ancillary variable `V` by local polynomial calibration.
//! Estimation profiles out `alpha(.)` with a local linear smoother and
//! solves a least-squares problem in the profiled variables; inference
//! covers linear hypotheses on the parametric part (profile ratio and
//! Wald tests) and constancy of the varying coefficients (a generalized
//! likelihood ratio test), with wild-bootstrap calibration of critical
//! values. A simulation harness reproduces the accompanying Monte Carlo
//! studies.
//!
//! See the `book/` directory for a guided tour; its code listings are
//! compiled and run as doc-tests.

pub mod bandwidth;
pub mod calibrate;
pub mod cli;
pub mod data;
pub mod error;
pub mod fit;
pub mod inference;
pub mod io;
pub mod kernel;
pub mod simulate;
pub mod smoother;
pub mod wls;

pub mod book;

pub use bandwidth::{cv_profile, cv_score, default_cv_grid, select_h};
pub use calibrate::{
    calibrate_all, calibrate_at, calibrate_grid, replicate_calibrate, replicate_calibrate_at,
    rule_of_thumb_b, Bandwidth, CalibratedCovariates, CalibrationConfig,
};
pub use data::Dataset;
pub use error::{Error, Result};
pub use fit::{
    fit_pipeline, fit_theta, fit_varying, fit_with_calibrated, residual_variance,
    theta_covariance, FitConfig, FitMode, HSelect, ProfileFit,
};
pub use inference::{
    draw_tau, glr_test, profile_ratio_test, restricted_fit, run_test, wald_test, wild_bootstrap,
    BootstrapConfig, GlrNull, HypothesisOrNull, LinearHypothesis, TestKind, TestRequest,
    TestResult,
};
pub use kernel::{kernel_eval, kernel_moments, KernelSpec};
pub use simulate::{
    coeff_functions, gen_dataset, preset, run_estimation_study, run_power_study, Alpha1Kind,
    Method, MonteCarloReport, PowerKind, ScenarioKind, ScenarioSpec, StudyPlan,
};
pub use smoother::{build_smoother, smoother_row, Smoother};
pub use wls::{solve_wls, WlsProblem, CONDITION_LIMIT};
