//! Hypothesis tests for the parametric and nonparametric parts.
//!
//! Linear restrictions `A Theta = c` are tested with a profile
//! least-squares ratio statistic (rescaled to a chi-squared reference by
//! the data-driven factor `rho_n`) and a Wald statistic built on the
//! sandwich covariance. Constancy of varying coefficients is tested with
//! a generalized likelihood ratio statistic calibrated exclusively by
//! wild bootstrap.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fit::{
    fit_pipeline, fit_theta_profiled, g_hat_matrix, solve_sym_checked,
    theta_covariance_from_parts, FitConfig, ProfileFit,
};
use crate::smoother::Smoother;

/// Linear hypothesis `A Theta = target` with `A` of full row rank.
#[derive(Debug, Clone)]
pub struct LinearHypothesis {
    pub a: Array2<f64>,
    pub target: Array1<f64>,
}

impl LinearHypothesis {
    /// Null hypothesis `A Theta = 0`.
    pub fn zero(a: Array2<f64>) -> Self {
        let l = a.nrows();
        LinearHypothesis {
            a,
            target: Array1::zeros(l),
        }
    }

    pub fn l(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let (l, cols) = self.a.dim();
        if l == 0 || l > p || cols != p {
            return Err(Error::InvalidHypothesis(format!(
                "A must be l x p with 1 <= l <= p; got {l} x {cols} with p = {p}"
            )));
        }
        if self.target.len() != l {
            return Err(Error::InvalidHypothesis(format!(
                "target has length {} but A has {l} rows",
                self.target.len()
            )));
        }
        let m = DMatrix::from_fn(l, cols, |r, c| self.a[[r, c]]);
        let svd = m.svd(false, false);
        let mut smax = 0.0f64;
        let mut smin = f64::INFINITY;
        for &s in svd.singular_values.iter() {
            smax = smax.max(s);
            smin = smin.min(s);
        }
        if !(smin > 1e-10 * smax) || smax == 0.0 {
            return Err(Error::InvalidHypothesis(format!(
                "A is rank deficient: singular values in [{smin:.3e}, {smax:.3e}]"
            )));
        }
        Ok(())
    }
}

/// Wild bootstrap settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha_level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 500,
            alpha_level: 0.05,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Validation("bootstrap needs B >= 1".into()));
        }
        if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
            return Err(Error::Validation(format!(
                "bootstrap level must lie in (0, 1), got {}",
                self.alpha_level
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Ratio,
    Wald,
    Glr,
}

impl std::fmt::Display for TestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TestKind::Ratio => write!(f, "ratio"),
            TestKind::Wald => write!(f, "wald"),
            TestKind::Glr => write!(f, "glr"),
        }
    }
}

/// Outcome of one hypothesis test.
#[derive(Debug, Clone)]
pub struct TestResult {
    pub test: TestKind,
    pub statistic: f64,
    /// `2 rho_n T_n` for the ratio test; equals `statistic` otherwise.
    pub scaled_statistic: f64,
    pub rho_n: Option<f64>,
    /// Eigenvalues of `(sigma^2 A Sigma^{-1} A')^{-1} (A n Sigma_1 A')`.
    pub omega_hat: Vec<f64>,
    pub df: usize,
    pub p_asymptotic: Option<f64>,
    pub p_bootstrap: Option<f64>,
    pub rss0: f64,
    pub rss1: f64,
    pub bootstrap: Option<BootstrapSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub critical_value: f64,
    pub replicates: usize,
    pub seed: u64,
    pub failures: usize,
}

/// Constrained estimate under `A Theta = target` and its residual sum of
/// squares `|| (I-S)(Y - Z_hat Theta_0) ||^2`.
pub fn restricted_fit(fit: &ProfileFit, hyp: &LinearHypothesis) -> Result<(Array1<f64>, f64)> {
    hyp.validate(fit.p())?;
    let p = fit.p();
    let ztz = fit.z_tilde.t().dot(&fit.z_tilde);
    let theta0 = constrained_theta(&ztz, fit.theta_hat.view(), hyp, hyp.target.view())?;
    let resid = &fit.y_tilde - &fit.z_tilde.dot(&theta0);
    let rss0 = resid.iter().map(|r| r * r).sum();
    debug_assert_eq!(theta0.len(), p);
    Ok((theta0, rss0))
}

/// `Theta_0 = Theta - (Z~'Z~)^{-1} A' {A (Z~'Z~)^{-1} A'}^{-1} (A Theta - target)`.
fn constrained_theta(
    ztz: &Array2<f64>,
    theta: ArrayView1<f64>,
    hyp: &LinearHypothesis,
    target: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let p = ztz.nrows();
    let l = hyp.l();
    let flat: Vec<f64> = ztz.iter().copied().collect();
    // C = (Z~'Z~)^{-1} A'   (p x l)
    let mut at = vec![0.0; p * l];
    for r in 0..l {
        for c in 0..p {
            at[c * l + r] = hyp.a[[r, c]];
        }
    }
    let c_mat = solve_sym_checked("restricted_fit", &flat, p, &at, l)?;
    // M = A C  (l x l)
    let mut m = vec![0.0; l * l];
    for r in 0..l {
        for cc in 0..l {
            let mut acc = 0.0;
            for k in 0..p {
                acc += hyp.a[[r, k]] * c_mat[k * l + cc];
            }
            m[r * l + cc] = acc;
        }
    }
    // gap = A theta - target
    let mut gap = vec![0.0; l];
    for r in 0..l {
        let mut acc = -target[r];
        for k in 0..p {
            acc += hyp.a[[r, k]] * theta[k];
        }
        gap[r] = acc;
    }
    let lambda = solve_sym_checked("restricted_fit", &m, l, &gap, 1)?;
    let mut theta0 = theta.to_owned();
    for k in 0..p {
        let mut acc = 0.0;
        for r in 0..l {
            acc += c_mat[k * l + r] * lambda[r];
        }
        theta0[k] -= acc;
    }
    Ok(theta0)
}

fn chi2_sf(x: f64, df: usize) -> f64 {
    let dist = ChiSquared::new(df as f64).expect("df >= 1");
    (1.0 - dist.cdf(x)).clamp(0.0, 1.0)
}

/// Scaling pieces of Theorem-5 form: eigenvalues of
/// `(sigma^2 A Sigma^{-1} A')^{-1} (A nSigma_1 A')` and `rho_n`.
fn rho_and_omega(
    fit: &ProfileFit,
    hyp: &LinearHypothesis,
    sigma2: f64,
    sigma1_hat: &Array2<f64>,
) -> Result<(f64, Vec<f64>)> {
    let p = fit.p();
    let l = hyp.l();
    let n = fit.n() as f64;
    // A Sigma^{-1} A': solve Sigma X = A' then A X
    let flat: Vec<f64> = fit.sigma_hat.iter().copied().collect();
    let mut at = vec![0.0; p * l];
    for r in 0..l {
        for c in 0..p {
            at[c * l + r] = hyp.a[[r, c]];
        }
    }
    let x = solve_sym_checked("test_scaling", &flat, p, &at, l)?;
    let mut p_mat = DMatrix::<f64>::zeros(l, l);
    let mut q_mat = DMatrix::<f64>::zeros(l, l);
    for r in 0..l {
        for cc in 0..l {
            let mut acc = 0.0;
            for k in 0..p {
                acc += hyp.a[[r, k]] * x[k * l + cc];
            }
            p_mat[(r, cc)] = sigma2 * acc;
            let mut accq = 0.0;
            for k in 0..p {
                let mut inner = 0.0;
                for kk in 0..p {
                    inner += sigma1_hat[[k, kk]] * hyp.a[[cc, kk]];
                }
                accq += hyp.a[[r, k]] * inner;
            }
            q_mat[(r, cc)] = n * accq;
        }
    }
    // eigenvalues of P^{-1} Q via the Cholesky similarity transform
    let chol = nalgebra::Cholesky::new(p_mat.clone()).ok_or_else(|| {
        Error::DegenerateCovariance("sigma^2 A Sigma^{-1} A' is not positive definite".into())
    })?;
    let linv_q = chol.l().solve_lower_triangular(&q_mat).ok_or_else(|| {
        Error::DegenerateCovariance("triangular solve failed in test scaling".into())
    })?;
    let m_sym = chol
        .l()
        .solve_lower_triangular(&linv_q.transpose())
        .ok_or_else(|| {
            Error::DegenerateCovariance("triangular solve failed in test scaling".into())
        })?;
    let sym = (&m_sym + &m_sym.transpose()) * 0.5;
    let mut omega: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    omega.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let trace: f64 = omega.iter().sum();
    if !(trace > 0.0) {
        return Err(Error::DegenerateCovariance(format!(
            "nonpositive trace {trace} in rho_n"
        )));
    }
    Ok((l as f64 / trace, omega))
}

/// Profile least-squares ratio test of `A Theta = target`.
pub fn profile_ratio_test(
    fit: &ProfileFit,
    hyp: &LinearHypothesis,
    sigma2: f64,
) -> Result<TestResult> {
    let (_, rss0) = restricted_fit(fit, hyp)?;
    let rss1 = fit.rss();
    let n = fit.n() as f64;
    let t_n = 0.5 * n * (rss0 - rss1).max(0.0) / rss1;
    let (rho_n, omega) = rho_and_omega(fit, hyp, sigma2, &fit.sigma1_hat)?;
    let scaled = 2.0 * rho_n * t_n;
    let l = hyp.l();
    Ok(TestResult {
        test: TestKind::Ratio,
        statistic: t_n,
        scaled_statistic: scaled,
        rho_n: Some(rho_n),
        omega_hat: omega,
        df: l,
        p_asymptotic: Some(chi2_sf(scaled, l)),
        p_bootstrap: None,
        rss0,
        rss1,
        bootstrap: None,
    })
}

/// Wald test of `A Theta = target` on the sandwich covariance.
pub fn wald_test(fit: &ProfileFit, hyp: &LinearHypothesis) -> Result<TestResult> {
    hyp.validate(fit.p())?;
    let w = wald_statistic(
        fit.theta_hat.view(),
        &fit.sigma1_hat,
        hyp,
        hyp.target.view(),
    )?;
    let (_, rss0) = restricted_fit(fit, hyp)?;
    let rss1 = fit.rss();
    let l = hyp.l();
    Ok(TestResult {
        test: TestKind::Wald,
        statistic: w,
        scaled_statistic: w,
        rho_n: None,
        omega_hat: Vec::new(),
        df: l,
        p_asymptotic: Some(chi2_sf(w, l)),
        p_bootstrap: None,
        rss0,
        rss1,
        bootstrap: None,
    })
}

fn wald_statistic(
    theta: ArrayView1<f64>,
    sigma1: &Array2<f64>,
    hyp: &LinearHypothesis,
    target: ArrayView1<f64>,
) -> Result<f64> {
    let p = theta.len();
    let l = hyp.l();
    let mut gap = vec![0.0; l];
    for r in 0..l {
        let mut acc = -target[r];
        for k in 0..p {
            acc += hyp.a[[r, k]] * theta[k];
        }
        gap[r] = acc;
    }
    // A Sigma_1 A'
    let mut m = vec![0.0; l * l];
    for r in 0..l {
        for cc in 0..l {
            let mut acc = 0.0;
            for k in 0..p {
                let mut inner = 0.0;
                for kk in 0..p {
                    inner += sigma1[[k, kk]] * hyp.a[[cc, kk]];
                }
                acc += hyp.a[[r, k]] * inner;
            }
            m[r * l + cc] = acc;
        }
    }
    let sol = solve_sym_checked("wald", &m, l, &gap, 1).map_err(|e| match e {
        Error::CollinearCovariates { condition, .. } => Error::DegenerateCovariance(format!(
            "A Sigma_1 A' is numerically singular (condition {condition:.3e})"
        )),
        other => other,
    })?;
    let mut w = 0.0;
    for r in 0..l {
        w += gap[r] * sol[r];
    }
    Ok(w.max(0.0))
}

/// Constancy null for the varying coefficients: the listed (0-based)
/// columns of `X` are restricted to constant coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlrNull {
    pub constant: Vec<usize>,
}

impl GlrNull {
    pub fn all(q: usize) -> Self {
        GlrNull {
            constant: (0..q).collect(),
        }
    }

    fn validate(&self, q: usize) -> Result<()> {
        if self.constant.is_empty() {
            return Err(Error::InvalidHypothesis(
                "constancy null needs at least one restricted coefficient".into(),
            ));
        }
        let mut seen = vec![false; q];
        for &j in &self.constant {
            if j >= q {
                return Err(Error::InvalidHypothesis(format!(
                    "constant index {j} out of range for q = {q}"
                )));
            }
            if seen[j] {
                return Err(Error::InvalidHypothesis(format!(
                    "constant index {j} repeated"
                )));
            }
            seen[j] = true;
        }
        Ok(())
    }
}

/// Everything needed to evaluate the GLR statistic on the original and
/// on bootstrap responses: the unrestricted fit plus the restricted
/// design with its own smoother.
pub struct GlrContext {
    pub fit1: ProfileFit,
    pub weights: Array1<f64>,
    pub null: GlrNull,
    /// Restricted linear block `[Z_hat, X_constant]`.
    z0: Array2<f64>,
    /// Varying columns kept under the null (may be empty).
    x0: Array2<f64>,
    /// `(I - S0) Z0`.
    z0_tilde: Array2<f64>,
    pub resid0: Array1<f64>,
    pub rss0: f64,
    pub rss1: f64,
}

impl GlrContext {
    pub fn statistic(&self) -> f64 {
        glr_statistic(self.rss0, self.rss1, &self.weights, &self.fit1.y_tilde)
    }
}

fn glr_statistic(rss0: f64, rss1: f64, weights: &Array1<f64>, y_scale: &Array1<f64>) -> f64 {
    let diff = rss0 - rss1;
    if diff <= 0.0 {
        return 0.0;
    }
    // noiseless guard: both fits numerically exact
    let scale: f64 = weights
        .iter()
        .zip(y_scale.iter())
        .map(|(w, y)| w * y * y)
        .sum();
    if rss1 <= 1e-20 * scale.max(1e-300) {
        if diff <= 1e-16 * scale.max(1e-300) {
            return 0.0;
        }
        return f64::INFINITY;
    }
    diff / rss1
}

/// Build the GLR fits. `weights` default to `1/n`.
pub fn glr_context(
    dataset: &Dataset,
    cfg: &FitConfig,
    null: &GlrNull,
    weights: Option<Array1<f64>>,
) -> Result<GlrContext> {
    dataset.validate()?;
    null.validate(dataset.q())?;
    let n = dataset.n();
    let weights = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::Validation(format!(
                    "GLR weights have length {} but n = {n}",
                    w.len()
                )));
            }
            if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
                return Err(Error::Validation(
                    "GLR weights must be nonnegative and finite".into(),
                ));
            }
            let total: f64 = w.sum();
            if (total - 1.0).abs() > 1e-8 {
                return Err(Error::Validation(format!(
                    "GLR weights must sum to 1, got {total}"
                )));
            }
            w
        }
        None => Array1::from_elem(n, 1.0 / n as f64),
    };

    let fit1 = fit_pipeline(dataset, cfg)?;
    let q = dataset.q();
    let varying: Vec<usize> = (0..q).filter(|j| !null.constant.contains(j)).collect();
    let p0 = fit1.p() + null.constant.len();

    // restricted linear block
    let mut z0 = Array2::zeros((n, p0));
    z0.slice_mut(s![.., ..fit1.p()]).assign(&fit1.z_hat);
    for (c, &j) in null.constant.iter().enumerate() {
        z0.column_mut(fit1.p() + c).assign(&dataset.x.column(j));
    }

    let (z0_tilde, y0_tilde, x0) = if varying.is_empty() {
        // full homogeneity: ordinary least squares of Y on (Z_hat, X)
        (z0.clone(), dataset.y.clone(), Array2::zeros((n, 0)))
    } else {
        let mut x0 = Array2::zeros((n, varying.len()));
        for (c, &j) in varying.iter().enumerate() {
            x0.column_mut(c).assign(&dataset.x.column(j));
        }
        let smoother = Smoother::new(x0.view(), dataset.u.view(), fit1.h, cfg.kernel)?;
        let mut rhs = Array2::zeros((n, p0 + 1));
        rhs.slice_mut(s![.., ..p0]).assign(&z0);
        rhs.column_mut(p0).assign(&dataset.y);
        let (smoothed, _) = smoother.apply_with_diag(rhs.view())?;
        let z0_tilde = &z0 - &smoothed.slice(s![.., ..p0]);
        let y0_tilde = &dataset.y - &smoothed.column(p0);
        (z0_tilde, y0_tilde, x0)
    };

    let theta0 = fit_theta_profiled(z0_tilde.view(), y0_tilde.view())
        .map_err(|e| e.at_stage("glr_null_fit"))?;
    let resid0 = &y0_tilde - &z0_tilde.dot(&theta0);
    let rss0 = weighted_rss(&resid0, &weights);
    let rss1 = weighted_rss(&fit1.residuals, &weights);

    Ok(GlrContext {
        fit1,
        weights,
        null: null.clone(),
        z0,
        x0,
        z0_tilde,
        resid0,
        rss0,
        rss1,
    })
}

fn weighted_rss(resid: &Array1<f64>, weights: &Array1<f64>) -> f64 {
    resid
        .iter()
        .zip(weights.iter())
        .map(|(r, w)| w * r * r)
        .sum()
}

/// Generalized likelihood ratio test of coefficient constancy. The
/// p-value comes only from the wild bootstrap (see [`wild_bootstrap`]).
pub fn glr_test(
    dataset: &Dataset,
    cfg: &FitConfig,
    null: &GlrNull,
    weights: Option<Array1<f64>>,
) -> Result<TestResult> {
    let ctx = glr_context(dataset, cfg, null, weights)?;
    Ok(glr_result_from_context(&ctx))
}

fn glr_result_from_context(ctx: &GlrContext) -> TestResult {
    let t = ctx.statistic();
    TestResult {
        test: TestKind::Glr,
        statistic: t,
        scaled_statistic: t,
        rho_n: None,
        omega_hat: Vec::new(),
        df: ctx.null.constant.len(),
        p_asymptotic: None,
        p_bootstrap: None,
        rss0: ctx.rss0,
        rss1: ctx.rss1,
        bootstrap: None,
    }
}

const TAU_NEG: f64 = -0.6180339887498949; // -(sqrt(5)-1)/2
const TAU_POS: f64 = 1.6180339887498949; // (sqrt(5)+1)/2
const TAU_P_NEG: f64 = 0.7236067977499790; // (sqrt(5)+1)/(2 sqrt(5))

/// One draw of the two-point wild bootstrap multiplier.
pub fn draw_tau<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.gen::<f64>() < TAU_P_NEG {
        TAU_NEG
    } else {
        TAU_POS
    }
}

/// Outcome of a bootstrap calibration.
#[derive(Debug, Clone)]
pub struct BootstrapOutcome {
    pub critical_value: f64,
    pub p_value: f64,
    pub failures: usize,
}

fn bootstrap_quantile(stats: &mut [f64], level: f64) -> f64 {
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let b = stats.len();
    let k = ((1.0 - level) * b as f64).ceil().max(1.0) as usize;
    stats[k.min(b) - 1]
}

fn bootstrap_pvalue(stats: &[f64], observed: f64) -> f64 {
    let exceed = stats.iter().filter(|&&s| s >= observed).count();
    (1.0 + exceed as f64) / (stats.len() as f64 + 1.0)
}

/// Leverage-standardized residuals for wild resampling.
///
/// The profiled residual vector is `r = A Y` with
/// `A = (I - P_{Z~})(I - S)`, so under homoscedastic errors
/// `E r_i^2 = sigma^2 (AA')_{ii}` and raw residuals understate the noise
/// wherever the smoother has high leverage. Dividing by
/// `sqrt((AA')_{ii})` restores the scale pointwise (the standardized
/// construction of the original wild bootstrap).
fn standardized_residuals(
    residuals: &Array1<f64>,
    s_mat: &Array2<f64>,
    z_tilde: &Array2<f64>,
) -> Result<Array1<f64>> {
    let n = residuals.len();
    let p = z_tilde.ncols();
    // M = I - S
    let mut m = -s_mat.clone();
    for i in 0..n {
        m[[i, i]] += 1.0;
    }
    // G = (Z~'Z~)^{-1} Z~' M  (p x n)
    let ztz = z_tilde.t().dot(z_tilde);
    let ztz_flat: Vec<f64> = ztz.iter().copied().collect();
    let ztm = z_tilde.t().dot(&m);
    let ztm_flat: Vec<f64> = ztm.iter().copied().collect();
    let g_flat = solve_sym_checked("bootstrap", &ztz_flat, p, &ztm_flat, n)?;
    let g = Array2::from_shape_vec((p, n), g_flat).expect("shape");
    // A = M - Z~ G, row sums of squares give (AA')_{ii}
    let a = &m - &z_tilde.dot(&g);
    let mut out = Array1::zeros(n);
    for i in 0..n {
        let d: f64 = a.row(i).iter().map(|v| v * v).sum();
        out[i] = residuals[i] / d.max(1e-3).sqrt();
    }
    Ok(out)
}

/// Wild bootstrap for the parametric tests. Bootstrap responses are
/// generated from the unrestricted fit with two-point multipliers on the
/// profiled residuals; each bootstrap statistic tests the recentered
/// hypothesis `A Theta = A Theta_hat`, whose null holds in the bootstrap
/// world, so the empirical quantile calibrates the original test.
pub struct ParametricBootstrap {
    pub ratio: BootstrapOutcome,
    pub wald: BootstrapOutcome,
}

pub fn bootstrap_parametric_tests(
    fit: &ProfileFit,
    dataset: &Dataset,
    hyp: &LinearHypothesis,
    boot: &BootstrapConfig,
    observed_ratio: f64,
    observed_wald: f64,
) -> Result<ParametricBootstrap> {
    boot.validate()?;
    hyp.validate(fit.p())?;
    let n = fit.n();
    let p = fit.p();

    // fixed pieces
    let smoother = Smoother::new(dataset.x.view(), dataset.u.view(), fit.h, fit.kernel)?;
    let s_mat = smoother.matrix()?;
    let fitted: Array1<f64> = &dataset.y - &fit.residuals;
    let resampled = standardized_residuals(&fit.residuals, &s_mat, &fit.z_tilde)?;
    let ztz = fit.z_tilde.t().dot(&fit.z_tilde);
    let ztz_flat: Vec<f64> = ztz.iter().copied().collect();
    // projector onto coefficients: theta* = (Z~'Z~)^{-1} Z~' y~*
    let zt: Array2<f64> = fit.z_tilde.t().to_owned();
    let zt_flat: Vec<f64> = zt.iter().copied().collect();
    let proj_flat = solve_sym_checked("bootstrap", &ztz_flat, p, &zt_flat, n)?;
    let proj = Array2::from_shape_vec((p, n), proj_flat).expect("shape");
    // recentered target
    let target = fit
        .theta_hat
        .view()
        .insert_axis(Axis(1))
        .to_owned();
    let target: Array1<f64> = hyp.a.dot(&target).column(0).to_owned();

    let results: Vec<Result<(f64, f64)>> = (0..boot.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha12Rng::seed_from_u64(boot.seed ^ b as u64);
            let mut y_star = Array1::zeros(n);
            for i in 0..n {
                y_star[i] = fitted[i] + draw_tau(&mut rng) * resampled[i];
            }
            let y_tilde_star = &y_star - &s_mat.dot(&y_star);
            let theta_star = proj.dot(&y_tilde_star);
            let resid_star = &y_tilde_star - &fit.z_tilde.dot(&theta_star);
            let rss1 = resid_star.iter().map(|r| r * r).sum::<f64>();
            let sigma2_star = rss1 / n as f64;

            let hyp_star = LinearHypothesis {
                a: hyp.a.clone(),
                target: target.clone(),
            };
            let theta0_star =
                constrained_theta(&ztz, theta_star.view(), &hyp_star, target.view())?;
            let resid0_star = &y_tilde_star - &fit.z_tilde.dot(&theta0_star);
            let rss0 = resid0_star.iter().map(|r| r * r).sum::<f64>();
            let t_star = 0.5 * n as f64 * (rss0 - rss1).max(0.0) / rss1;

            // covariance pieces with bootstrap beta and sigma^2
            let mut tmp_fit_beta = theta_star.slice(s![..fit.p1]).to_owned();
            if fit.p1 == 0 {
                tmp_fit_beta = Array1::zeros(0);
            }
            let g_star = g_hat_matrix(fit, tmp_fit_beta.view())?;
            let sigma1_star =
                theta_covariance_from_parts(sigma2_star, &fit.sigma_hat, g_star.as_ref(), n)?;
            let (rho_star, _) = rho_and_omega(fit, &hyp_star, sigma2_star, &sigma1_star)?;
            let scaled_star = 2.0 * rho_star * t_star;
            let w_star =
                wald_statistic(theta_star.view(), &sigma1_star, &hyp_star, target.view())?;
            Ok((scaled_star, w_star))
        })
        .collect();

    let mut ratio_stats = Vec::with_capacity(boot.replicates);
    let mut wald_stats = Vec::with_capacity(boot.replicates);
    let mut failures = 0usize;
    for r in results {
        match r {
            Ok((a, w)) => {
                ratio_stats.push(a);
                wald_stats.push(w);
            }
            Err(_) => failures += 1,
        }
    }
    if failures * 20 > boot.replicates {
        return Err(Error::BootstrapInstability {
            failed: failures,
            total: boot.replicates,
        });
    }
    if ratio_stats.is_empty() {
        return Err(Error::BootstrapInstability {
            failed: failures,
            total: boot.replicates,
        });
    }
    let p_ratio = bootstrap_pvalue(&ratio_stats, observed_ratio);
    let p_wald = bootstrap_pvalue(&wald_stats, observed_wald);
    let crit_ratio = bootstrap_quantile(&mut ratio_stats, boot.alpha_level);
    let crit_wald = bootstrap_quantile(&mut wald_stats, boot.alpha_level);
    Ok(ParametricBootstrap {
        ratio: BootstrapOutcome {
            critical_value: crit_ratio,
            p_value: p_ratio,
            failures,
        },
        wald: BootstrapOutcome {
            critical_value: crit_wald,
            p_value: p_wald,
            failures,
        },
    })
}

/// Wild bootstrap for the GLR test. Responses are generated from the
/// restricted (null) fit with multipliers on the unrestricted residuals,
/// so the bootstrap world satisfies the constancy null.
pub fn bootstrap_glr(ctx: &GlrContext, dataset: &Dataset, boot: &BootstrapConfig) -> Result<BootstrapOutcome> {
    boot.validate()?;
    let n = dataset.n();
    let p = ctx.fit1.p();
    let p0 = ctx.z0.ncols();

    // smoothers held fixed
    let smoother1 = Smoother::new(
        dataset.x.view(),
        dataset.u.view(),
        ctx.fit1.h,
        ctx.fit1.kernel,
    )?;
    let s1 = smoother1.matrix()?;
    let s0 = if ctx.x0.ncols() > 0 {
        let smoother0 = Smoother::new(ctx.x0.view(), dataset.u.view(), ctx.fit1.h, ctx.fit1.kernel)?;
        Some(smoother0.matrix()?)
    } else {
        None
    };

    // projectors for both designs
    let ztz1 = ctx.fit1.z_tilde.t().dot(&ctx.fit1.z_tilde);
    let flat1: Vec<f64> = ztz1.iter().copied().collect();
    let zt1: Array2<f64> = ctx.fit1.z_tilde.t().to_owned();
    let zt1_flat: Vec<f64> = zt1.iter().copied().collect();
    let proj1 = Array2::from_shape_vec(
        (p, n),
        solve_sym_checked("bootstrap", &flat1, p, &zt1_flat, n)?,
    )
    .expect("shape");

    let ztz0 = ctx.z0_tilde.t().dot(&ctx.z0_tilde);
    let flat0: Vec<f64> = ztz0.iter().copied().collect();
    let zt0: Array2<f64> = ctx.z0_tilde.t().to_owned();
    let zt0_flat: Vec<f64> = zt0.iter().copied().collect();
    let proj0 = Array2::from_shape_vec(
        (p0, n),
        solve_sym_checked("bootstrap", &flat0, p0, &zt0_flat, n)?,
    )
    .expect("shape");

    // null-fit conditional mean: Y - [(I-S0)(Y - Z0 theta0)] is the H0
    // fitted value at the sample points
    let fitted0: Array1<f64> = &dataset.y - &ctx.resid0;
    let eps_hat = standardized_residuals(&ctx.fit1.residuals, &s1, &ctx.fit1.z_tilde)?;

    let observed = ctx.statistic();
    let results: Vec<Result<f64>> = (0..boot.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha12Rng::seed_from_u64(boot.seed ^ b as u64);
            let mut y_star = Array1::zeros(n);
            for i in 0..n {
                y_star[i] = fitted0[i] + draw_tau(&mut rng) * eps_hat[i];
            }
            // unrestricted refit
            let y1t = &y_star - &s1.dot(&y_star);
            let th1 = proj1.dot(&y1t);
            let r1 = &y1t - &ctx.fit1.z_tilde.dot(&th1);
            let rss1 = weighted_rss(&r1, &ctx.weights);
            // restricted refit
            let y0t = match &s0 {
                Some(s) => &y_star - &s.dot(&y_star),
                None => y_star.clone(),
            };
            let th0 = proj0.dot(&y0t);
            let r0 = &y0t - &ctx.z0_tilde.dot(&th0);
            let rss0 = weighted_rss(&r0, &ctx.weights);
            Ok(glr_statistic(rss0, rss1, &ctx.weights, &y1t))
        })
        .collect();

    let mut stats = Vec::with_capacity(boot.replicates);
    let mut failures = 0usize;
    for r in results {
        match r {
            Ok(t) => stats.push(t),
            Err(_) => failures += 1,
        }
    }
    if failures * 20 > boot.replicates || stats.is_empty() {
        return Err(Error::BootstrapInstability {
            failed: failures,
            total: boot.replicates,
        });
    }
    let p_value = bootstrap_pvalue(&stats, observed);
    let critical_value = bootstrap_quantile(&mut stats, boot.alpha_level);
    Ok(BootstrapOutcome {
        critical_value,
        p_value,
        failures,
    })
}

/// Hypothesis payload for [`wild_bootstrap`].
pub enum HypothesisOrNull<'a> {
    Parametric(&'a LinearHypothesis),
    Constancy(&'a GlrNull),
}

/// Wild-bootstrap critical value and p-value for one test (spec surface).
pub fn wild_bootstrap(
    kind: TestKind,
    dataset: &Dataset,
    cfg: &FitConfig,
    hyp_or_null: HypothesisOrNull<'_>,
    boot: &BootstrapConfig,
) -> Result<(f64, f64)> {
    match (kind, hyp_or_null) {
        (TestKind::Ratio, HypothesisOrNull::Parametric(hyp)) => {
            let fit = fit_pipeline(dataset, cfg)?;
            let base = profile_ratio_test(&fit, hyp, fit.sigma2_hat)?;
            let wald = wald_test(&fit, hyp)?;
            let out = bootstrap_parametric_tests(
                &fit,
                dataset,
                hyp,
                boot,
                base.scaled_statistic,
                wald.statistic,
            )?;
            Ok((out.ratio.critical_value, out.ratio.p_value))
        }
        (TestKind::Wald, HypothesisOrNull::Parametric(hyp)) => {
            let fit = fit_pipeline(dataset, cfg)?;
            let base = profile_ratio_test(&fit, hyp, fit.sigma2_hat)?;
            let wald = wald_test(&fit, hyp)?;
            let out = bootstrap_parametric_tests(
                &fit,
                dataset,
                hyp,
                boot,
                base.scaled_statistic,
                wald.statistic,
            )?;
            Ok((out.wald.critical_value, out.wald.p_value))
        }
        (TestKind::Glr, HypothesisOrNull::Constancy(null)) => {
            let ctx = glr_context(dataset, cfg, null, None)?;
            let out = bootstrap_glr(&ctx, dataset, boot)?;
            Ok((out.critical_value, out.p_value))
        }
        _ => Err(Error::InvalidHypothesis(
            "test kind does not match the hypothesis payload".into(),
        )),
    }
}

/// Request for [`run_test`].
pub enum TestRequest {
    Ratio(LinearHypothesis),
    Wald(LinearHypothesis),
    Glr(GlrNull, Option<Array1<f64>>),
}

/// Fit and test in one call, optionally attaching a bootstrap
/// calibration to the result.
pub fn run_test(
    dataset: &Dataset,
    cfg: &FitConfig,
    request: &TestRequest,
    boot: Option<&BootstrapConfig>,
) -> Result<TestResult> {
    match request {
        TestRequest::Ratio(hyp) | TestRequest::Wald(hyp) => {
            let fit = fit_pipeline(dataset, cfg)?;
            let ratio = profile_ratio_test(&fit, hyp, fit.sigma2_hat)?;
            let wald = wald_test(&fit, hyp)?;
            let mut result = match request {
                TestRequest::Ratio(_) => ratio.clone(),
                _ => wald.clone(),
            };
            if let Some(b) = boot {
                let out = bootstrap_parametric_tests(
                    &fit,
                    dataset,
                    hyp,
                    b,
                    ratio.scaled_statistic,
                    wald.statistic,
                )?;
                let chosen = match request {
                    TestRequest::Ratio(_) => out.ratio,
                    _ => out.wald,
                };
                result.p_bootstrap = Some(chosen.p_value);
                result.bootstrap = Some(BootstrapSummary {
                    critical_value: chosen.critical_value,
                    replicates: b.replicates,
                    seed: b.seed,
                    failures: chosen.failures,
                });
            }
            Ok(result)
        }
        TestRequest::Glr(null, weights) => {
            let ctx = glr_context(dataset, cfg, null, weights.clone())?;
            let mut result = glr_result_from_context(&ctx);
            if let Some(b) = boot {
                let out = bootstrap_glr(&ctx, dataset, b)?;
                result.p_bootstrap = Some(out.p_value);
                result.bootstrap = Some(BootstrapSummary {
                    critical_value: out.critical_value,
                    replicates: b.replicates,
                    seed: b.seed,
                    failures: out.failures,
                });
            }
            Ok(result)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::{Bandwidth, CalibrationConfig};
    use crate::fit::{FitMode, HSelect};
    use crate::kernel::KernelSpec;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand_distr::StandardNormal;

    fn sim_dataset(n: usize, seed: u64, beta: [f64; 3], noise: f64) -> Dataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let v = Array1::from_shape_fn(n, |_| rng.gen_range(0.0f64..1.0));
        let xi = v.mapv(|t| 3.0 * t - 2.0 * (4.0 * std::f64::consts::PI * t).cos());
        let w = Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let x = Array2::from_shape_fn((n, 2), |_| {
            0.8f64.sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        let u = Array1::from_shape_fn(n, |_| rng.gen_range(0.0f64..3.0));
        let mut y = Array1::zeros(n);
        for i in 0..n {
            let a1 = (-u[i] * u[i]).exp() + (std::f64::consts::PI * u[i]).sin();
            let a2 = 0.5 * u[i] * u[i] - (2.0 * std::f64::consts::PI * u[i]).cos();
            y[i] = beta[0] * xi[i]
                + beta[1] * w[[i, 0]]
                + beta[2] * w[[i, 1]]
                + a1 * x[[i, 0]]
                + a2 * x[[i, 1]]
                + noise * rng.sample::<f64, _>(StandardNormal);
        }
        Dataset {
            y,
            eta: xi.clone().insert_axis(Axis(1)),
            v,
            w,
            x,
            u,
            xi: Some(xi.insert_axis(Axis(1))),
        }
    }

    fn bench_cfg(h: f64) -> FitConfig {
        FitConfig {
            h: HSelect::Fixed(h),
            kernel: KernelSpec::Gaussian,
            calibration: CalibrationConfig {
                order: 1,
                bandwidth: Bandwidth::RuleOfThumb,
                kernel: KernelSpec::Gaussian,
            },
            mode: FitMode::Benchmark,
            alpha_grid: Some(vec![1.5]),
            cv_grid_points: 10,
        }
    }

    #[test]
    fn identity_hypothesis_zeroes_theta() {
        let ds = sim_dataset(80, 1, [0.2, -1.0, 1.0], 1.0);
        let fit = fit_pipeline(&ds, &bench_cfg(0.4)).unwrap();
        let hyp = LinearHypothesis::zero(Array2::eye(3));
        let (theta0, rss0) = restricted_fit(&fit, &hyp).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(theta0[k], 0.0, epsilon = 1e-12);
        }
        assert!(rss0 >= fit.rss());
    }

    #[test]
    fn restriction_holds_exactly_and_rss_identity() {
        let ds = sim_dataset(70, 3, [0.2, -1.0, 1.0], 1.0);
        let fit = fit_pipeline(&ds, &bench_cfg(0.5)).unwrap();
        let hyp = LinearHypothesis {
            a: array![[1.0, 1.0, 1.0]],
            target: array![0.3],
        };
        let (theta0, rss0) = restricted_fit(&fit, &hyp).unwrap();
        let gap = hyp.a.dot(&theta0) - &hyp.target;
        assert_abs_diff_eq!(gap[0], 0.0, epsilon = 1e-9);
        // RSS0 - RSS1 = (theta - theta0)' Z~'Z~ (theta - theta0)
        let diff = &fit.theta_hat - &theta0;
        let ztz = fit.z_tilde.t().dot(&fit.z_tilde);
        let quad = diff.dot(&ztz.dot(&diff));
        assert_abs_diff_eq!(rss0 - fit.rss(), quad, epsilon = 1e-8 * rss0.max(1.0));
    }

    #[test]
    fn rank_deficient_hypothesis_rejected() {
        let ds = sim_dataset(50, 5, [0.0, -1.0, 1.0], 0.5);
        let fit = fit_pipeline(&ds, &bench_cfg(0.5)).unwrap();
        let hyp = LinearHypothesis::zero(array![[1.0, 1.0, 0.0], [2.0, 2.0, 0.0]]);
        assert!(matches!(
            restricted_fit(&fit, &hyp),
            Err(Error::InvalidHypothesis(_))
        ));
    }

    #[test]
    fn rho_n_is_one_in_benchmark_mode() {
        // with G = 0 the trace ratio is exactly l
        let ds = sim_dataset(200, 7, [0.2, -1.2, 1.0], 1.0);
        let fit = fit_pipeline(&ds, &bench_cfg(0.4)).unwrap();
        let hyp = LinearHypothesis::zero(array![[1.0, 1.0, 1.0]]);
        let res = profile_ratio_test(&fit, &hyp, fit.sigma2_hat).unwrap();
        assert_abs_diff_eq!(res.rho_n.unwrap(), 1.0, epsilon = 1e-10);
        assert!(res.p_asymptotic.unwrap() >= 0.0 && res.p_asymptotic.unwrap() <= 1.0);
    }

    #[test]
    fn wald_zero_when_restriction_already_holds() {
        let ds = sim_dataset(60, 9, [0.2, -1.0, 1.0], 1.0);
        let fit = fit_pipeline(&ds, &bench_cfg(0.5)).unwrap();
        let t = fit.theta_hat.clone();
        let hyp = LinearHypothesis {
            a: array![[1.0, 0.0, 0.0]],
            target: array![t[0]],
        };
        let res = wald_test(&fit, &hyp).unwrap();
        assert_abs_diff_eq!(res.statistic, 0.0, epsilon = 1e-16);
    }

    #[test]
    fn tests_invariant_under_row_scaling() {
        let ds = sim_dataset(80, 11, [0.2, -1.0, 1.0], 1.0);
        let fit = fit_pipeline(&ds, &bench_cfg(0.5)).unwrap();
        let a1 = array![[1.0, 1.0, 1.0], [0.0, 1.0, -1.0]];
        let a2 = array![[3.5, 3.5, 3.5], [0.0, -0.7, 0.7]];
        let h1 = LinearHypothesis::zero(a1);
        let h2 = LinearHypothesis::zero(a2);
        let r1 = profile_ratio_test(&fit, &h1, fit.sigma2_hat).unwrap();
        let r2 = profile_ratio_test(&fit, &h2, fit.sigma2_hat).unwrap();
        assert_abs_diff_eq!(r1.statistic, r2.statistic, epsilon = 1e-8);
        assert_abs_diff_eq!(r1.scaled_statistic, r2.scaled_statistic, epsilon = 1e-8);
        let w1 = wald_test(&fit, &h1).unwrap();
        let w2 = wald_test(&fit, &h2).unwrap();
        assert_abs_diff_eq!(w1.statistic, w2.statistic, epsilon = 1e-8);
        assert_abs_diff_eq!(
            w1.p_asymptotic.unwrap(),
            w2.p_asymptotic.unwrap(),
            epsilon = 1e-8
        );
    }

    #[test]
    fn glr_zero_for_truly_constant_coefficients() {
        let mut ds = sim_dataset(80, 13, [0.2, -1.0, 1.0], 0.0);
        // overwrite response with constant coefficients and no noise
        for i in 0..ds.n() {
            let xi = ds.xi.as_ref().unwrap()[[i, 0]];
            ds.y[i] = 0.2 * xi - ds.w[[i, 0]] + ds.w[[i, 1]]
                + 1.5 * ds.x[[i, 0]]
                - 0.5 * ds.x[[i, 1]];
        }
        let res = glr_test(&ds, &bench_cfg(0.5), &GlrNull::all(2), None).unwrap();
        assert!(res.statistic < 1e-8, "T_GLR = {}", res.statistic);
    }

    #[test]
    fn glr_partial_null_detects_varying_first_coefficient() {
        let ds = sim_dataset(150, 15, [0.2, -1.0, 1.0], 0.3);
        // alpha_1 truly varies in this dataset
        let res = glr_test(
            &ds,
            &bench_cfg(0.3),
            &GlrNull { constant: vec![0] },
            None,
        )
        .unwrap();
        assert!(res.statistic > 0.05, "T_GLR = {}", res.statistic);
        assert!(res.rss0 >= res.rss1 - 1e-8 * res.rss1);
    }

    #[test]
    fn tau_support_probability_and_moments() {
        // analytic checks of the two-point distribution
        let p = TAU_P_NEG;
        assert_abs_diff_eq!(TAU_NEG, -((5.0f64.sqrt() - 1.0) / 2.0), epsilon = 1e-15);
        assert_abs_diff_eq!(TAU_POS, (5.0f64.sqrt() + 1.0) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p, (5.0f64.sqrt() + 1.0) / (2.0 * 5.0f64.sqrt()), epsilon = 1e-15);
        let m1 = p * TAU_NEG + (1.0 - p) * TAU_POS;
        let m2 = p * TAU_NEG * TAU_NEG + (1.0 - p) * TAU_POS * TAU_POS;
        let m3 = p * TAU_NEG.powi(3) + (1.0 - p) * TAU_POS.powi(3);
        assert_abs_diff_eq!(m1, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m2, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m3, 1.0, epsilon = 1e-12);
        // empirical mean over 1e5 draws
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let mut acc = 0.0;
        let mut seen_neg = false;
        let mut seen_pos = false;
        for _ in 0..100_000 {
            let t = draw_tau(&mut rng);
            assert!(t == TAU_NEG || t == TAU_POS);
            seen_neg |= t == TAU_NEG;
            seen_pos |= t == TAU_POS;
            acc += t;
        }
        assert!(seen_neg && seen_pos);
        assert!((acc / 1e5).abs() < 0.01);
    }

    #[test]
    fn bootstrap_b1_pvalue_is_half_or_one() {
        let ds = sim_dataset(60, 19, [0.2, -1.0, 1.0], 1.0);
        let hyp = LinearHypothesis::zero(array![[1.0, 1.0, 1.0]]);
        let boot = BootstrapConfig {
            replicates: 1,
            alpha_level: 0.05,
            seed: 5,
        };
        let (_, p) = wild_bootstrap(
            TestKind::Ratio,
            &ds,
            &bench_cfg(0.5),
            HypothesisOrNull::Parametric(&hyp),
            &boot,
        )
        .unwrap();
        assert!(p == 0.5 || p == 1.0, "p = {p}");
    }

    #[test]
    fn bootstrap_deterministic_for_fixed_seed() {
        let ds = sim_dataset(60, 21, [0.2, -1.0, 1.0], 1.0);
        let hyp = LinearHypothesis::zero(array![[1.0, 1.0, 1.0]]);
        let boot = BootstrapConfig {
            replicates: 50,
            alpha_level: 0.05,
            seed: 7,
        };
        let cfg = bench_cfg(0.5);
        let (c1, p1) =
            wild_bootstrap(TestKind::Wald, &ds, &cfg, HypothesisOrNull::Parametric(&hyp), &boot)
                .unwrap();
        let (c2, p2) =
            wild_bootstrap(TestKind::Wald, &ds, &cfg, HypothesisOrNull::Parametric(&hyp), &boot)
                .unwrap();
        assert_eq!(c1.to_bits(), c2.to_bits());
        assert_eq!(p1.to_bits(), p2.to_bits());
    }

    #[test]
    fn glr_bootstrap_level_behaviour_smoke() {
        // constant alpha_1 in truth: bootstrap p-value should usually not
        // be tiny. Single seeded draw as a smoke test.
        let mut ds = sim_dataset(90, 23, [0.2, -1.0, 1.0], 1.0);
        let m = 0.5076;
        for i in 0..ds.n() {
            let xi = ds.xi.as_ref().unwrap()[[i, 0]];
            let a2 = 0.5 * ds.u[i] * ds.u[i] - (2.0 * std::f64::consts::PI * ds.u[i]).cos();
            ds.y[i] = 0.2 * xi - ds.w[[i, 0]] + ds.w[[i, 1]]
                + m * ds.x[[i, 0]]
                + a2 * ds.x[[i, 1]]
                + ds.y[i] * 0.0
                + 1.0 * {
                    let mut r = ChaCha12Rng::seed_from_u64(1000 + i as u64);
                    r.sample::<f64, _>(StandardNormal)
                };
        }
        let res = run_test(
            &ds,
            &bench_cfg(0.4),
            &TestRequest::Glr(GlrNull { constant: vec![0] }, None),
            Some(&BootstrapConfig {
                replicates: 99,
                alpha_level: 0.05,
                seed: 3,
            }),
        )
        .unwrap();
        let p = res.p_bootstrap.unwrap();
        assert!(p > 0.01, "under the null the GLR p-value was {p}");
    }
}
