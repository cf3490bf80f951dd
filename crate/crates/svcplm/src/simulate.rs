//! Monte Carlo studies: data generation, estimation comparisons and
//! power studies for the benchmark (B), proposed (P) and naive (N)
//! estimators.
//!
//! The generative model is
//!
//! ```text
//! Y = b1 xi + b2 W1 + b3 W2 + alpha1(U) X1 + alpha2(U) X2 + eps,
//! xi(V) = 3V - 2cos(4 pi V),   eta = xi(V) + e,
//! ```
//!
//! with `W` bivariate normal (unit variances, correlation `1/sqrt(5)`),
//! `X1, X2` independent `N(0, 0.8)`, `V ~ U[0,1]`, `U ~ U[0,3]` and
//! Gaussian errors.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::OnceLock;

use crate::calibrate::{Bandwidth, CalibrationConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fit::{fit_pipeline, FitConfig, FitMode, HSelect};
use crate::inference::{
    bootstrap_glr, bootstrap_parametric_tests, glr_context, profile_ratio_test, wald_test,
    BootstrapConfig, GlrNull, LinearHypothesis,
};
use crate::kernel::{adaptive_simpson, KernelSpec};

/// `alpha_1(u) = exp(-u^2) + sin(pi u)`.
pub fn alpha1(u: f64) -> f64 {
    (-u * u).exp() + (std::f64::consts::PI * u).sin()
}

/// Mean level `m = (1/3) int_0^3 alpha_1(t) dt`.
pub fn alpha1_mean() -> f64 {
    static M: OnceLock<f64> = OnceLock::new();
    *M.get_or_init(|| {
        adaptive_simpson(&alpha1, 0.0, 3.0, 1e-10).expect("quadrature of a smooth function") / 3.0
    })
}

/// Homotopy `m + rho (alpha_1(u) - m)` between the constant level and
/// the full curve.
pub fn alpha1_tilde(u: f64, rho: f64) -> f64 {
    let m = alpha1_mean();
    m + rho * (alpha1(u) - m)
}

/// `alpha_2(u) = u^2/2 - cos(2 pi u)`.
pub fn alpha2(u: f64) -> f64 {
    0.5 * u * u - (2.0 * std::f64::consts::PI * u).cos()
}

/// All coefficient functions at one point (spec surface).
pub fn coeff_functions(u: f64, rho: f64) -> (f64, f64, f64, f64) {
    (alpha1(u), alpha1_tilde(u, rho), alpha2(u), alpha1_mean())
}

/// Population variance of `xi(V) = 3V - 2cos(4 pi V)` for `V ~ U[0,1]`:
/// `9/12 + 4/2 = 2.75` (the cross term vanishes).
pub const SIGMA_XI2: f64 = 2.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    I,
    II,
    III,
    IV,
    Custom,
}

/// Which curve plays `alpha_1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alpha1Kind {
    /// The full curve of the first design.
    Curve,
    /// `m + rho (alpha_1 - m)` with `rho` taken from the sweep value.
    HomotopySweep,
    /// Homotopy with a fixed `rho`.
    Homotopy { rho: f64 },
}

/// A Monte Carlo study cell layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: ScenarioKind,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Baseline coefficients; scenario (i) overrides `beta_2` with
    /// `c - 1` and the parametric power design with `c - 1.2`.
    pub beta: [f64; 3],
    pub alpha1: Alpha1Kind,
    /// Sweep values: `c` (scenario i), `rho` (ii, iii), `r` (iv).
    pub sweep: Vec<f64>,
    #[serde(default = "default_sigma_eps2")]
    pub sigma_eps2: f64,
    #[serde(default = "default_sigma_e2")]
    pub sigma_e2: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cv_points")]
    pub cv_grid_points: usize,
    /// Calibration bandwidth override; `None` uses `sd(V) n^{-1/3}`.
    #[serde(default)]
    pub calibration_b: Option<f64>,
}

fn default_n() -> usize {
    100
}
fn default_replicates() -> usize {
    500
}
fn default_sigma_eps2() -> f64 {
    1.0
}
fn default_sigma_e2() -> f64 {
    2.0
}
fn default_cv_points() -> usize {
    10
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.replicates == 0 {
            return Err(Error::Validation(
                "scenario needs n >= 1 and replicates >= 1".into(),
            ));
        }
        if self.sweep.is_empty() {
            return Err(Error::Validation("scenario sweep is empty".into()));
        }
        if self.scenario == ScenarioKind::IV {
            for &r in &self.sweep {
                if !(r > 0.0 && r < 1.0) {
                    return Err(Error::Validation(format!(
                        "scenario (iv) signal-noise ratio must lie in (0,1), got {r}"
                    )));
                }
            }
        }
        if !(self.sigma_eps2 >= 0.0) || !(self.sigma_e2 >= 0.0) {
            return Err(Error::Validation("variances must be nonnegative".into()));
        }
        Ok(())
    }

    /// Effective parameters in one sweep cell.
    fn cell(&self, sweep: f64) -> CellParams {
        let mut beta = self.beta;
        let mut sigma_e2 = self.sigma_e2;
        let mut rho = match self.alpha1 {
            Alpha1Kind::Homotopy { rho } => rho,
            _ => 1.0,
        };
        match self.scenario {
            ScenarioKind::I => beta[1] = sweep - 1.0,
            ScenarioKind::II | ScenarioKind::III | ScenarioKind::Custom => {
                if self.alpha1 == Alpha1Kind::HomotopySweep {
                    rho = sweep;
                }
            }
            ScenarioKind::IV => sigma_e2 = SIGMA_XI2 * (1.0 - sweep) / sweep,
        }
        let use_homotopy = !matches!(self.alpha1, Alpha1Kind::Curve);
        CellParams {
            beta,
            sigma_eps2: self.sigma_eps2,
            sigma_e2,
            rho,
            use_homotopy,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct CellParams {
    beta: [f64; 3],
    sigma_eps2: f64,
    sigma_e2: f64,
    rho: f64,
    use_homotopy: bool,
}

/// Hidden truth retained for scoring.
#[derive(Debug, Clone)]
pub struct Truth {
    pub theta: Array1<f64>,
    pub rho: f64,
    pub uses_homotopy: bool,
}

/// Draw one dataset from model cell parameters. The true `xi` rides
/// along in `Dataset::xi` for the benchmark estimator.
pub fn gen_dataset(spec: &ScenarioSpec, sweep: f64, rng: &mut ChaCha12Rng) -> (Dataset, Truth) {
    let params = spec.cell(sweep);
    gen_from_params(spec.n, &params, rng)
}

fn gen_from_params(n: usize, params: &CellParams, rng: &mut ChaCha12Rng) -> (Dataset, Truth) {
    let corr = 1.0 / 5.0f64.sqrt();
    let corr_c = (1.0 - corr * corr).sqrt();
    let sd_x = 0.8f64.sqrt();
    let sd_e = params.sigma_e2.sqrt();
    let sd_eps = params.sigma_eps2.sqrt();

    let mut y = Array1::zeros(n);
    let mut eta = Array2::zeros((n, 1));
    let mut v = Array1::zeros(n);
    let mut w = Array2::zeros((n, 2));
    let mut x = Array2::zeros((n, 2));
    let mut u = Array1::zeros(n);
    let mut xi = Array2::zeros((n, 1));

    for i in 0..n {
        v[i] = rng.gen_range(0.0..1.0);
        u[i] = rng.gen_range(0.0..3.0);
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        w[[i, 0]] = z1;
        w[[i, 1]] = corr * z1 + corr_c * z2;
        x[[i, 0]] = sd_x * rng.sample::<f64, _>(StandardNormal);
        x[[i, 1]] = sd_x * rng.sample::<f64, _>(StandardNormal);
        let xiv = 3.0 * v[i] - 2.0 * (4.0 * std::f64::consts::PI * v[i]).cos();
        xi[[i, 0]] = xiv;
        eta[[i, 0]] = xiv + sd_e * rng.sample::<f64, _>(StandardNormal);
        let a1 = if params.use_homotopy {
            alpha1_tilde(u[i], params.rho)
        } else {
            alpha1(u[i])
        };
        let a2 = alpha2(u[i]);
        y[i] = params.beta[0] * xiv
            + params.beta[1] * w[[i, 0]]
            + params.beta[2] * w[[i, 1]]
            + a1 * x[[i, 0]]
            + a2 * x[[i, 1]]
            + sd_eps * rng.sample::<f64, _>(StandardNormal);
    }
    let ds = Dataset {
        y,
        eta,
        v,
        w,
        x,
        u,
        xi: Some(xi),
    };
    let truth = Truth {
        theta: Array1::from(params.beta.to_vec()),
        rho: params.rho,
        uses_homotopy: params.use_homotopy,
    };
    (ds, truth)
}

/// Estimator labels in report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    B,
    P,
    N,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::B, Method::P, Method::N];

    pub fn mode(&self) -> FitMode {
        match self {
            Method::B => FitMode::Benchmark,
            Method::P => FitMode::Proposed,
            Method::N => FitMode::Naive,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::B => write!(f, "B"),
            Method::P => write!(f, "P"),
            Method::N => write!(f, "N"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstRow {
    pub sweep: f64,
    pub method: Method,
    pub coef: String,
    pub est: f64,
    pub se: f64,
    pub sd: f64,
    pub cov: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerRow {
    pub sweep: f64,
    pub test: String,
    pub calibration: String,
    pub method: Method,
    pub power: f64,
}

/// Aggregated study output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub est_rows: Vec<EstRow>,
    pub power_rows: Vec<PowerRow>,
    pub replicates: usize,
    pub seed: u64,
    pub failures: usize,
    pub notes: Vec<String>,
}

impl MonteCarloReport {
    pub fn est_row(&self, sweep: f64, method: Method, coef: &str) -> Option<&EstRow> {
        self.est_rows.iter().find(|r| {
            (r.sweep - sweep).abs() < 1e-12 && r.method == method && r.coef == coef
        })
    }

    pub fn power(
        &self,
        sweep: f64,
        test: &str,
        calibration: &str,
        method: Method,
    ) -> Option<f64> {
        self.power_rows
            .iter()
            .find(|r| {
                (r.sweep - sweep).abs() < 1e-12
                    && r.test == test
                    && r.calibration == calibration
                    && r.method == method
            })
            .map(|r| r.power)
    }
}

/// Deterministic seed derivation for nested Monte Carlo streams.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut z = master ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        z ^= p.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        // splitmix64 finalize
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut t = z;
        t = (t ^ (t >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        t = (t ^ (t >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z = t ^ (t >> 31);
    }
    z
}

fn z_975() -> f64 {
    static Z: OnceLock<f64> = OnceLock::new();
    *Z.get_or_init(|| {
        Normal::new(0.0, 1.0)
            .expect("standard normal")
            .inverse_cdf(0.975)
    })
}

fn study_fit_config(spec: &ScenarioSpec, mode: FitMode) -> FitConfig {
    FitConfig {
        h: HSelect::CrossValidated,
        kernel: KernelSpec::Gaussian,
        calibration: CalibrationConfig {
            order: 1,
            bandwidth: match spec.calibration_b {
                Some(b) => Bandwidth::Fixed(b),
                None => Bandwidth::RuleOfThumb,
            },
            kernel: KernelSpec::Gaussian,
        },
        mode,
        alpha_grid: Some(vec![1.5]),
        cv_grid_points: spec.cv_grid_points,
    }
}

const MAX_FAILURE_PER_MILLE: usize = 20; // 2%

/// Estimation study: per sweep value and replicate, fit all three
/// estimators (bandwidths selected per replicate) and aggregate
/// Est/SE/SD/COV rows for every coefficient.
pub fn run_estimation_study(spec: &ScenarioSpec) -> Result<MonteCarloReport> {
    spec.validate()?;
    let p = 3usize;
    let z = z_975();
    let mut rows = Vec::new();
    let mut total_failures = 0usize;
    let mut notes = scenario_notes(spec);

    for (cell_idx, &sweep) in spec.sweep.iter().enumerate() {
        type RepOut = [(Array1<f64>, Array1<f64>); 3];
        let results: Vec<std::result::Result<Box<RepOut>, String>> = (0..spec.replicates)
            .into_par_iter()
            .map(|rep| {
                let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(
                    spec.seed,
                    &[0xE57, cell_idx as u64, rep as u64],
                ));
                let (ds, _) = gen_dataset(spec, sweep, &mut rng);
                let mut out: Box<RepOut> = Box::new([
                    (Array1::zeros(p), Array1::zeros(p)),
                    (Array1::zeros(p), Array1::zeros(p)),
                    (Array1::zeros(p), Array1::zeros(p)),
                ]);
                for (slot, method) in Method::ALL.iter().enumerate() {
                    let cfg = study_fit_config(spec, method.mode());
                    let fit = fit_pipeline(&ds, &cfg).map_err(|e| e.to_string())?;
                    out[slot] = (fit.theta_hat.clone(), fit.se_theta.clone());
                }
                Ok(out)
            })
            .collect();

        let mut ok: Vec<Box<RepOut>> = Vec::with_capacity(spec.replicates);
        let mut failures = 0usize;
        let mut last_err = String::new();
        for r in results {
            match r {
                Ok(v) => ok.push(v),
                Err(e) => {
                    failures += 1;
                    last_err = e;
                }
            }
        }
        total_failures += failures;
        if failures * 1000 > MAX_FAILURE_PER_MILLE * spec.replicates {
            return Err(Error::SimulationInstability {
                cell: format!("sweep={sweep} ({last_err})"),
                failed: failures,
                total: spec.replicates,
            });
        }

        let truth = {
            let mut rng = ChaCha12Rng::seed_from_u64(0);
            gen_dataset(spec, sweep, &mut rng).1.theta
        };
        let m = ok.len() as f64;
        for (slot, method) in Method::ALL.iter().enumerate() {
            for k in 0..p {
                let ests: Vec<f64> = ok.iter().map(|r| r[slot].0[k]).collect();
                let ses: Vec<f64> = ok.iter().map(|r| r[slot].1[k]).collect();
                let est = ests.iter().sum::<f64>() / m;
                let se = ses.iter().sum::<f64>() / m;
                let sd = (ests.iter().map(|e| (e - est) * (e - est)).sum::<f64>()
                    / (m - 1.0).max(1.0))
                .sqrt();
                let cov = ests
                    .iter()
                    .zip(ses.iter())
                    .filter(|(e, s)| (**e - truth[k]).abs() <= z * **s)
                    .count() as f64
                    / m;
                rows.push(EstRow {
                    sweep,
                    method: *method,
                    coef: format!("beta_{}", k + 1),
                    est,
                    se,
                    sd,
                    cov,
                });
            }
        }
    }
    notes.push(format!("replicates={} per cell", spec.replicates));
    Ok(MonteCarloReport {
        est_rows: rows,
        power_rows: Vec::new(),
        replicates: spec.replicates,
        seed: spec.seed,
        failures: total_failures,
        notes,
    })
}

fn scenario_notes(spec: &ScenarioSpec) -> Vec<String> {
    let mut notes = Vec::new();
    if spec.scenario == ScenarioKind::II {
        notes.push(
            "scenario (ii) sweeps the declared rho set {0.0, 0.2, 0.5, 0.7, 1.0}; the \
             published table lists a partially different column of sweep values"
                .into(),
        );
    }
    notes
}

/// Which hypothesis a power study exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerKind {
    /// `A beta = c` with `A = (1,1,1)`, `beta = (0.2, c-1.2, 1)`.
    Parametric,
    /// Constancy of `alpha_1` against the homotopy alternative.
    Nonparametric,
}

/// Power study: rejection rates at level `boot.alpha_level` for the
/// ratio and Wald tests (asymptotic and bootstrap calibration) or the
/// GLR test (bootstrap only).
pub fn run_power_study(
    spec: &ScenarioSpec,
    kind: PowerKind,
    boot: &BootstrapConfig,
) -> Result<MonteCarloReport> {
    spec.validate()?;
    let level = boot.alpha_level;
    let mut rows = Vec::new();
    let mut total_failures = 0usize;

    for (cell_idx, &sweep) in spec.sweep.iter().enumerate() {
        // rejection counters per method: [aym_tn, boot_tn, aym_wald, boot_wald] or [glr]
        let results: Vec<std::result::Result<Vec<[bool; 4]>, String>> = (0..spec.replicates)
            .into_par_iter()
            .map(|rep| {
                let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(
                    spec.seed,
                    &[0xF0E, cell_idx as u64, rep as u64],
                ));
                let params = power_cell(spec, kind, sweep);
                let (ds, _) = gen_from_params(spec.n, &params, &mut rng);
                let mut per_method = Vec::with_capacity(3);
                for method in Method::ALL {
                    let cfg = study_fit_config(spec, method.mode());
                    let boot_rep = BootstrapConfig {
                        replicates: boot.replicates,
                        alpha_level: boot.alpha_level,
                        seed: derive_seed(
                            boot.seed,
                            &[0xB007, cell_idx as u64, rep as u64, method_index(method)],
                        ),
                    };
                    let flags = match kind {
                        PowerKind::Parametric => {
                            parametric_rejections(&ds, &cfg, &boot_rep, level)
                        }
                        PowerKind::Nonparametric => glr_rejections(&ds, &cfg, &boot_rep),
                    }
                    .map_err(|e| e.to_string())?;
                    per_method.push(flags);
                }
                Ok(per_method)
            })
            .collect();

        let mut counts = [[0usize; 4]; 3];
        let mut ok_count = 0usize;
        let mut failures = 0usize;
        let mut last_err = String::new();
        for r in results {
            match r {
                Ok(flags) => {
                    ok_count += 1;
                    for (m, f) in flags.iter().enumerate() {
                        for (j, &hit) in f.iter().enumerate() {
                            if hit {
                                counts[m][j] += 1;
                            }
                        }
                    }
                }
                Err(e) => {
                    failures += 1;
                    last_err = e;
                }
            }
        }
        total_failures += failures;
        if failures * 1000 > MAX_FAILURE_PER_MILLE * spec.replicates {
            return Err(Error::SimulationInstability {
                cell: format!("sweep={sweep} ({last_err})"),
                failed: failures,
                total: spec.replicates,
            });
        }
        let denom = ok_count.max(1) as f64;
        for (m, method) in Method::ALL.iter().enumerate() {
            match kind {
                PowerKind::Parametric => {
                    let labels = [
                        ("T_n", "Aym", 0usize),
                        ("T_n", "Boot", 1),
                        ("Wald", "Aym", 2),
                        ("Wald", "Boot", 3),
                    ];
                    for (test, cal, j) in labels {
                        rows.push(PowerRow {
                            sweep,
                            test: test.into(),
                            calibration: cal.into(),
                            method: *method,
                            power: counts[m][j] as f64 / denom,
                        });
                    }
                }
                PowerKind::Nonparametric => {
                    rows.push(PowerRow {
                        sweep,
                        test: "GLR".into(),
                        calibration: "Boot".into(),
                        method: *method,
                        power: counts[m][0] as f64 / denom,
                    });
                }
            }
        }
    }

    Ok(MonteCarloReport {
        est_rows: Vec::new(),
        power_rows: rows,
        replicates: spec.replicates,
        seed: spec.seed,
        failures: total_failures,
        notes: vec![format!(
            "bootstrap B={} at level {}",
            boot.replicates, boot.alpha_level
        )],
    })
}

fn method_index(m: Method) -> u64 {
    match m {
        Method::B => 0,
        Method::P => 1,
        Method::N => 2,
    }
}

fn power_cell(spec: &ScenarioSpec, kind: PowerKind, sweep: f64) -> CellParams {
    match kind {
        PowerKind::Parametric => CellParams {
            beta: [0.2, sweep - 1.2, 1.0],
            sigma_eps2: spec.sigma_eps2,
            sigma_e2: spec.sigma_e2,
            rho: 1.0,
            use_homotopy: false,
        },
        PowerKind::Nonparametric => CellParams {
            beta: [0.2, -1.0, 1.0],
            sigma_eps2: spec.sigma_eps2,
            sigma_e2: spec.sigma_e2,
            rho: sweep,
            use_homotopy: true,
        },
    }
}

/// `[aym_tn, boot_tn, aym_wald, boot_wald]` rejection flags for one fit.
fn parametric_rejections(
    ds: &Dataset,
    cfg: &FitConfig,
    boot: &BootstrapConfig,
    level: f64,
) -> Result<[bool; 4]> {
    let hyp = LinearHypothesis::zero(Array2::ones((1, 3)));
    let fit = fit_pipeline(ds, cfg)?;
    let ratio = profile_ratio_test(&fit, &hyp, fit.sigma2_hat)?;
    let wald = wald_test(&fit, &hyp)?;
    let out = bootstrap_parametric_tests(
        &fit,
        ds,
        &hyp,
        boot,
        ratio.scaled_statistic,
        wald.statistic,
    )?;
    Ok([
        ratio.p_asymptotic.unwrap_or(1.0) < level,
        ratio.scaled_statistic > out.ratio.critical_value,
        wald.p_asymptotic.unwrap_or(1.0) < level,
        wald.statistic > out.wald.critical_value,
    ])
}

fn glr_rejections(ds: &Dataset, cfg: &FitConfig, boot: &BootstrapConfig) -> Result<[bool; 4]> {
    let null = GlrNull { constant: vec![0] };
    let ctx = glr_context(ds, cfg, &null, None)?;
    let out = bootstrap_glr(&ctx, ds, boot)?;
    Ok([ctx.statistic() > out.critical_value, false, false, false])
}

/// A runnable study: an estimation scenario or a power design.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "lowercase")]
pub enum StudyPlan {
    Estimation { spec: ScenarioSpec },
    Power {
        spec: ScenarioSpec,
        kind: PowerKind,
        bootstrap: BootstrapConfig,
    },
}

impl StudyPlan {
    pub fn run(&self) -> Result<MonteCarloReport> {
        match self {
            StudyPlan::Estimation { spec } => run_estimation_study(spec),
            StudyPlan::Power {
                spec,
                kind,
                bootstrap,
            } => run_power_study(spec, *kind, bootstrap),
        }
    }

    pub fn spec_mut(&mut self) -> &mut ScenarioSpec {
        match self {
            StudyPlan::Estimation { spec } => spec,
            StudyPlan::Power { spec, .. } => spec,
        }
    }

    pub fn spec(&self) -> &ScenarioSpec {
        match self {
            StudyPlan::Estimation { spec } => spec,
            StudyPlan::Power { spec, .. } => spec,
        }
    }
}

/// Named study presets mirroring the published tables.
pub fn preset(name: &str, seed: u64) -> Option<StudyPlan> {
    // The published studies pair n = 100 with the small-sample window
    // rule for the calibration bandwidth (about five observations per
    // interval of width 2b on a unit-range V), i.e. b = 0.025; the
    // sd(V) n^{-1/3} rule oversmooths the oscillating xi at this sample
    // size and visibly biases the calibrated estimator upward.
    let base = |scenario, beta, alpha1, sweep: Vec<f64>| ScenarioSpec {
        scenario,
        n: 100,
        replicates: 500,
        beta,
        alpha1,
        sweep,
        sigma_eps2: 1.0,
        sigma_e2: 2.0,
        seed,
        cv_grid_points: 10,
        calibration_b: Some(0.025),
    };
    let plan = match name {
        "scenario_i" => StudyPlan::Estimation {
            spec: base(
                ScenarioKind::I,
                [0.0, -1.0, 1.0],
                Alpha1Kind::Curve,
                vec![0.0, 0.1, 0.2, 0.25, 0.5, 0.7, 1.0],
            ),
        },
        "scenario_ii" => StudyPlan::Estimation {
            spec: base(
                ScenarioKind::II,
                [0.0, -0.8, 1.0],
                Alpha1Kind::HomotopySweep,
                vec![0.0, 0.2, 0.5, 0.7, 1.0],
            ),
        },
        "scenario_iii" => StudyPlan::Estimation {
            spec: base(
                ScenarioKind::III,
                [0.2, -1.0, 1.0],
                Alpha1Kind::HomotopySweep,
                vec![0.0, 0.2, 0.5, 0.7, 1.0],
            ),
        },
        "scenario_iv" => StudyPlan::Estimation {
            spec: base(
                ScenarioKind::IV,
                [0.2, -1.0, 1.0],
                Alpha1Kind::Curve,
                vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
            ),
        },
        "table5" | "table5_desk" => {
            let desk = name.ends_with("_desk");
            let mut spec = base(
                ScenarioKind::Custom,
                [0.2, -1.2, 1.0],
                Alpha1Kind::Curve,
                if desk {
                    vec![0.0, 0.5, 1.0]
                } else {
                    vec![0.0, 0.1, 0.2, 0.25, 0.5, 0.7, 1.0]
                },
            );
            spec.replicates = if desk { 200 } else { 500 };
            StudyPlan::Power {
                spec,
                kind: PowerKind::Parametric,
                bootstrap: BootstrapConfig {
                    replicates: if desk { 200 } else { 500 },
                    alpha_level: 0.05,
                    seed,
                },
            }
        }
        "table6" | "table6_desk" => {
            let desk = name.ends_with("_desk");
            let mut spec = base(
                ScenarioKind::Custom,
                [0.2, -1.0, 1.0],
                Alpha1Kind::HomotopySweep,
                if desk {
                    vec![0.0, 0.5]
                } else {
                    vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.5, 0.7]
                },
            );
            spec.replicates = if desk { 200 } else { 500 };
            StudyPlan::Power {
                spec,
                kind: PowerKind::Nonparametric,
                bootstrap: BootstrapConfig {
                    replicates: if desk { 200 } else { 500 },
                    alpha_level: 0.05,
                    seed,
                },
            }
        }
        _ => return None,
    };
    Some(plan)
}

/// Render the report rows in the tables' CSV layout.
pub fn report_csv(report: &MonteCarloReport) -> String {
    let mut out = String::new();
    if !report.est_rows.is_empty() {
        out.push_str("sweep,method,coef,est,se,sd,cov\n");
        for r in &report.est_rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.sweep, r.method, r.coef, r.est, r.se, r.sd, r.cov
            ));
        }
    } else {
        out.push_str("sweep,test,calibration,method,power\n");
        for r in &report.power_rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.sweep, r.test, r.calibration, r.method, r.power
            ));
        }
    }
    out
}
