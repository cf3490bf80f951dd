//! Profile least-squares estimation.
//!
//! With the varying coefficients profiled out by the smoother `S`, the
//! parametric part solves an ordinary least-squares problem in the
//! profiled variables `Z~ = (I-S) Z_hat` and `(I-S) Y`. The varying
//! coefficients are then recovered by local linear fits to the partial
//! residuals `Y - Z_hat theta_hat`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrate_all, CalibratedCovariates, CalibrationConfig, SortedIndex};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::smoother::Smoother;
use crate::wls::{condition_sym, lu_solve_in_place};

/// Which covariate block stands in for the unobserved `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// Calibrate `xi` from `(eta, V)`.
    Proposed,
    /// Plug the surrogate `eta` in directly.
    Naive,
    /// Use the true `xi` (simulation / validation data only).
    Benchmark,
}

impl std::fmt::Display for FitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitMode::Proposed => write!(f, "proposed"),
            FitMode::Naive => write!(f, "naive"),
            FitMode::Benchmark => write!(f, "benchmark"),
        }
    }
}

/// Coefficient bandwidth request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HSelect {
    Fixed(f64),
    /// Leave-one-out cross-validation over a log-spaced grid.
    CrossValidated,
}

/// Configuration of the full fitting pipeline.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub h: HSelect,
    pub kernel: KernelSpec,
    pub calibration: CalibrationConfig,
    pub mode: FitMode,
    /// Evaluation grid for the varying coefficients; `None` uses 101
    /// equispaced points over the observed range of `U` (trimmed 2.5%
    /// at each edge for compact kernels).
    pub alpha_grid: Option<Vec<f64>>,
    /// Number of candidate bandwidths when `h` is cross-validated.
    pub cv_grid_points: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            h: HSelect::CrossValidated,
            kernel: KernelSpec::Gaussian,
            calibration: CalibrationConfig::default(),
            mode: FitMode::Proposed,
            alpha_grid: None,
            cv_grid_points: 20,
        }
    }
}

/// Result of the profile least-squares pipeline.
#[derive(Debug, Clone)]
pub struct ProfileFit {
    pub mode: FitMode,
    /// `Theta_hat = (beta_hat', theta_hat')'`, length `p = p1 + p2`.
    pub theta_hat: Array1<f64>,
    pub se_theta: Array1<f64>,
    pub sigma2_hat: f64,
    /// `(1/n) Z~'Z~`.
    pub sigma_hat: Array2<f64>,
    /// Sandwich covariance estimate of `Theta_hat` (not of `sqrt(n) Theta_hat`).
    pub sigma1_hat: Array2<f64>,
    /// Second moment of the calibration residuals, `p1 x p1`.
    pub sigma_e_hat: Array2<f64>,
    /// Smoothed profiled covariates at the sample points, `n x p`
    /// (zero outside proposed mode, where it does not enter anything).
    pub b_hat: Array2<f64>,
    /// Varying-coefficient evaluation points.
    pub alpha_u: Array1<f64>,
    /// `alpha_hat(u)` on the grid, `|grid| x q`.
    pub alpha: Array2<f64>,
    /// Derivative estimates on the grid, `|grid| x q`.
    pub dalpha: Array2<f64>,
    /// `Y - Z_hat Theta_hat - M_hat`.
    pub residuals: Array1<f64>,
    /// `M_hat = S (Y - Z_hat Theta_hat)` at the sample points.
    pub m_hat: Array1<f64>,
    pub trace_s: f64,
    pub h: f64,
    pub b: Option<f64>,
    pub p1: usize,
    pub kernel: KernelSpec,
    /// The covariate block used for `Z`, `n x p`.
    pub z_hat: Array2<f64>,
    /// `(I - S) Z_hat`.
    pub z_tilde: Array2<f64>,
    /// `(I - S) Y`.
    pub y_tilde: Array1<f64>,
    pub calibration: Option<CalibratedCovariates>,
}

impl ProfileFit {
    /// Coefficients of the calibrated block.
    pub fn beta_hat(&self) -> ArrayView1<'_, f64> {
        self.theta_hat.slice(s![..self.p1])
    }

    /// Profiled residual sum of squares.
    pub fn rss(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }

    pub fn n(&self) -> usize {
        self.y_tilde.len()
    }

    pub fn p(&self) -> usize {
        self.theta_hat.len()
    }
}

/// Solve a small symmetric system with a condition check, labelling
/// failures as collinear covariates in `stage`.
pub(crate) fn solve_sym_checked(
    stage: &'static str,
    a: &[f64],
    m: usize,
    rhs: &[f64],
    nrhs: usize,
) -> Result<Vec<f64>> {
    let condition = condition_sym(a, m);
    if !(condition <= crate::wls::CONDITION_LIMIT) {
        return Err(Error::CollinearCovariates { stage, condition });
    }
    let mut lu = a.to_vec();
    let mut sol = rhs.to_vec();
    if !lu_solve_in_place(&mut lu, m, &mut sol, nrhs) {
        return Err(Error::CollinearCovariates { stage, condition });
    }
    Ok(sol)
}

/// Profile least-squares coefficients given an explicit smoother matrix.
/// `Theta_hat = (Z~'Z~)^{-1} Z~'(I-S)Y` with `Z~ = (I-S) Z_hat`.
pub fn fit_theta(
    z_hat: ArrayView2<f64>,
    y: ArrayView1<f64>,
    s_matrix: ArrayView2<f64>,
) -> Result<Array1<f64>> {
    let z_tilde = &z_hat - &s_matrix.dot(&z_hat);
    let y_tilde = &y - &s_matrix.dot(&y);
    fit_theta_profiled(z_tilde.view(), y_tilde.view())
}

/// Profile least-squares coefficients from the profiled variables.
pub fn fit_theta_profiled(
    z_tilde: ArrayView2<f64>,
    y_tilde: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let p = z_tilde.ncols();
    let mut normal = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for i in 0..z_tilde.nrows() {
        let row = z_tilde.row(i);
        for a in 0..p {
            rhs[a] += row[a] * y_tilde[i];
            for b in a..p {
                normal[a * p + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            normal[a * p + b] = normal[b * p + a];
        }
    }
    let sol = solve_sym_checked("fit_theta", &normal, p, &rhs, 1)?;
    Ok(Array1::from(sol))
}

/// Local linear varying-coefficient estimate at `u0` given the
/// parametric fit: returns `(a(u0), b(u0))`.
pub fn fit_varying<'a>(
    u0: f64,
    x: ArrayView2<'a, f64>,
    u: ArrayView1<'a, f64>,
    y: ArrayView1<f64>,
    z_hat: ArrayView2<f64>,
    theta_hat: ArrayView1<f64>,
    h: f64,
    kernel: KernelSpec,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let smoother = Smoother::new(x, u, h, kernel)?;
    let resid = partial_residual(y, z_hat, theta_hat);
    let resid2 = resid.insert_axis(Axis(1));
    let coef = smoother.local_coefficients(u0, resid2.view())?;
    split_local_coefficients(&coef, x.ncols(), h)
}

fn split_local_coefficients(
    coef: &Array2<f64>,
    q: usize,
    h: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let a = coef.slice(s![..q, 0]).to_owned();
    let b = coef.slice(s![q.., 0]).mapv(|v| v / h);
    Ok((a, b))
}

/// `Y - Z_hat Theta_hat`.
pub fn partial_residual(
    y: ArrayView1<f64>,
    z_hat: ArrayView2<f64>,
    theta: ArrayView1<f64>,
) -> Array1<f64> {
    &y - &z_hat.dot(&theta)
}

/// Mean squared residual `sigma_hat^2 = (1/n) sum (Y_i - Theta'Z_i - M_i)^2`.
pub fn residual_variance(
    y: ArrayView1<f64>,
    z_hat: ArrayView2<f64>,
    theta: ArrayView1<f64>,
    m_hat: ArrayView1<f64>,
) -> f64 {
    let n = y.len();
    let mut acc = 0.0;
    let fitted = z_hat.dot(&theta);
    for i in 0..n {
        let r = y[i] - fitted[i] - m_hat[i];
        acc += r * r;
    }
    acc / n as f64
}

/// Nadaraya-Watson regression of the rows of `z` on `v`, evaluated at
/// each sample point.
pub fn nw_rows_on_v(
    z: ArrayView2<f64>,
    v: ArrayView1<f64>,
    b: f64,
    kernel: KernelSpec,
) -> Result<Array2<f64>> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::InvalidBandwidth(b));
    }
    let (n, p) = z.dim();
    let sorted = SortedIndex::new(v);
    let mut out = Array2::zeros((n, p));
    for i in 0..n {
        let (lo, hi) = if kernel.compact_support() {
            sorted.window(v[i], b)
        } else {
            (0, n)
        };
        let mut den = 0.0;
        let mut num = vec![0.0; p];
        for s in lo..hi {
            let j = sorted.order[s];
            let w = kernel.density((v[j] - v[i]) / b) / b;
            if w == 0.0 {
                continue;
            }
            den += w;
            for c in 0..p {
                num[c] += w * z[[j, c]];
            }
        }
        if den <= 0.0 {
            return Err(Error::SingularDesign {
                location: format!("Nadaraya-Watson at V={}", v[i]),
                condition: f64::INFINITY,
            });
        }
        for c in 0..p {
            out[[i, c]] = num[c] / den;
        }
    }
    Ok(out)
}

/// Sandwich covariance `(1/n) Sigma^{-1} (sigma^2 Sigma + G) Sigma^{-1}`.
/// With `g_hat = None` this reduces to `sigma^2 Sigma^{-1} / n`.
pub fn theta_covariance_from_parts(
    sigma2: f64,
    sigma: &Array2<f64>,
    g_hat: Option<&Array2<f64>>,
    n: usize,
) -> Result<Array2<f64>> {
    let p = sigma.nrows();
    let flat: Vec<f64> = sigma.iter().copied().collect();
    let mut inner = sigma * sigma2;
    if let Some(g) = g_hat {
        inner = &inner + g;
    }
    // A = Sigma^{-1} inner  (solve Sigma A = inner)
    let inner_flat: Vec<f64> = inner.iter().copied().collect();
    let a = solve_sym_checked("theta_covariance", &flat, p, &inner_flat, p)?;
    // B = A Sigma^{-1}: solve Sigma B' = A' and transpose; Sigma symmetric.
    let mut a_t = vec![0.0; p * p];
    for r in 0..p {
        for c in 0..p {
            a_t[c * p + r] = a[r * p + c];
        }
    }
    let b_t = solve_sym_checked("theta_covariance", &flat, p, &a_t, p)?;
    let mut out = Array2::zeros((p, p));
    for r in 0..p {
        for c in 0..p {
            out[[r, c]] = b_t[c * p + r] / n as f64;
        }
    }
    // symmetrize away solve round-off
    let sym = (&out + &out.t()) * 0.5;
    Ok(sym)
}

/// Covariance estimate for a completed fit (spec surface). Recomputes
/// the sandwich from the stored pieces.
pub fn theta_covariance(fit: &ProfileFit) -> Result<Array2<f64>> {
    let g = g_hat_matrix(fit, fit.beta_hat())?;
    theta_covariance_from_parts(fit.sigma2_hat, &fit.sigma_hat, g.as_ref(), fit.n())
}

/// `G_hat = (1/n) sum (e_i' beta)^2 B_hat(V_i) B_hat(V_i)'` in proposed
/// mode, `None` otherwise.
pub fn g_hat_matrix(fit: &ProfileFit, beta: ArrayView1<f64>) -> Result<Option<Array2<f64>>> {
    if fit.mode != FitMode::Proposed {
        return Ok(None);
    }
    let cal = fit.calibration.as_ref().ok_or_else(|| {
        Error::Validation("proposed-mode fit is missing calibration residuals".into())
    })?;
    let n = fit.n();
    let p = fit.p();
    let mut g = Array2::zeros((p, p));
    for i in 0..n {
        let mut eb = 0.0;
        for k in 0..fit.p1 {
            eb += cal.e_hat[[i, k]] * beta[k];
        }
        let w = eb * eb;
        let brow = fit.b_hat.row(i);
        for r in 0..p {
            let wbr = w * brow[r];
            for c in r..p {
                g[[r, c]] += wbr * brow[c];
            }
        }
    }
    for r in 0..p {
        for c in 0..r {
            g[[r, c]] = g[[c, r]];
        }
    }
    g /= n as f64;
    Ok(Some(g))
}

fn default_alpha_grid(u: ArrayView1<f64>, kernel: KernelSpec) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in u.iter() {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let range = hi - lo;
    let (a, b) = if kernel.compact_support() {
        (lo + 0.025 * range, hi - 0.025 * range)
    } else {
        (lo, hi)
    };
    let m = 101;
    (0..m)
        .map(|i| a + (b - a) * i as f64 / (m - 1) as f64)
        .collect()
}

/// Assemble the covariate block for a mode. Proposed mode runs the
/// calibration; the returned option carries its output.
pub fn assemble_z_hat(
    dataset: &Dataset,
    cfg: &FitConfig,
) -> Result<(Array2<f64>, Option<CalibratedCovariates>)> {
    let n = dataset.n();
    let p = dataset.p();
    let mut z = Array2::zeros((n, p));
    let p1 = dataset.p1();
    let cal = match cfg.mode {
        FitMode::Proposed => {
            let cal = calibrate_all(dataset.eta.view(), dataset.v.view(), &cfg.calibration)
                .map_err(|e| e.at_stage("calibrate"))?;
            z.slice_mut(s![.., ..p1]).assign(&cal.xi_hat);
            Some(cal)
        }
        FitMode::Naive => {
            z.slice_mut(s![.., ..p1]).assign(&dataset.eta);
            None
        }
        FitMode::Benchmark => {
            let xi = dataset.xi.as_ref().ok_or_else(|| {
                Error::Validation("benchmark mode requires true xi columns".into())
            })?;
            z.slice_mut(s![.., ..p1]).assign(xi);
            None
        }
    };
    if dataset.p2() > 0 {
        z.slice_mut(s![.., p1..]).assign(&dataset.w);
    }
    Ok((z, cal))
}

/// Run the full pipeline: calibrate, profile, estimate the varying
/// coefficients, the residual variance and the covariance estimates.
pub fn fit_pipeline(dataset: &Dataset, cfg: &FitConfig) -> Result<ProfileFit> {
    dataset.validate().map_err(|e| e.at_stage("validate"))?;
    let (z_hat, cal) = assemble_z_hat(dataset, cfg)?;
    fit_prepared(dataset, cfg, z_hat, cal)
}

/// Run the pipeline with externally supplied calibrated covariates.
pub fn fit_with_calibrated(
    dataset: &Dataset,
    cfg: &FitConfig,
    cal: CalibratedCovariates,
) -> Result<ProfileFit> {
    dataset.validate().map_err(|e| e.at_stage("validate"))?;
    let n = dataset.n();
    let p1 = dataset.p1();
    let mut z = Array2::zeros((n, dataset.p()));
    z.slice_mut(s![.., ..p1]).assign(&cal.xi_hat);
    if dataset.p2() > 0 {
        z.slice_mut(s![.., p1..]).assign(&dataset.w);
    }
    fit_prepared(dataset, cfg, z, Some(cal))
}

pub(crate) fn fit_prepared(
    dataset: &Dataset,
    cfg: &FitConfig,
    z_hat: Array2<f64>,
    cal: Option<CalibratedCovariates>,
) -> Result<ProfileFit> {
    let n = dataset.n();
    let p = dataset.p();
    let p1 = dataset.p1();
    let q = dataset.q();

    let b = match &cal {
        Some(c) => Some(c.bandwidth),
        None => cfg.calibration.resolve_bandwidth(dataset.v.view()).ok(),
    };

    let h = match cfg.h {
        HSelect::Fixed(h) => {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::InvalidBandwidth(h).at_stage("bandwidth"));
            }
            h
        }
        HSelect::CrossValidated => {
            let grid = crate::bandwidth::default_cv_grid(dataset.u.view(), cfg.cv_grid_points);
            crate::bandwidth::select_h_with_zhat(&grid, dataset, cfg, z_hat.view())
                .map_err(|e| e.at_stage("bandwidth"))?
        }
    };

    let smoother = Smoother::new(dataset.x.view(), dataset.u.view(), h, cfg.kernel)
        .map_err(|e| e.at_stage("smooth"))?;

    // apply S to [Z_hat | Y] in one pass
    let mut rhs = Array2::zeros((n, p + 1));
    rhs.slice_mut(s![.., ..p]).assign(&z_hat);
    rhs.column_mut(p).assign(&dataset.y);
    let (smoothed, diag) = smoother
        .apply_with_diag(rhs.view())
        .map_err(|e| e.at_stage("smooth"))?;
    let trace_s = diag.sum();

    let z_tilde = &z_hat - &smoothed.slice(s![.., ..p]);
    let y_tilde = &dataset.y - &smoothed.column(p);

    let theta_hat =
        fit_theta_profiled(z_tilde.view(), y_tilde.view()).map_err(|e| e.at_stage("fit_theta"))?;

    // M_hat = S(Y - Z_hat Theta) = SY - (S Z_hat) Theta
    let s_z = smoothed.slice(s![.., ..p]);
    let m_hat = &smoothed.column(p) - &s_z.dot(&theta_hat);
    let residuals = &y_tilde - &z_tilde.dot(&theta_hat);
    let sigma2_hat = residuals.iter().map(|r| r * r).sum::<f64>() / n as f64;

    // varying coefficients on the grid
    let grid: Vec<f64> = match &cfg.alpha_grid {
        Some(g) => g.clone(),
        None => default_alpha_grid(dataset.u.view(), cfg.kernel),
    };
    let resid0 = partial_residual(dataset.y.view(), z_hat.view(), theta_hat.view());
    let resid0 = resid0.insert_axis(Axis(1));
    let mut alpha = Array2::zeros((grid.len(), q));
    let mut dalpha = Array2::zeros((grid.len(), q));
    for (g, &u0) in grid.iter().enumerate() {
        let coef = smoother
            .local_coefficients(u0, resid0.view())
            .map_err(|e| e.at_stage("fit_varying"))?;
        for j in 0..q {
            alpha[[g, j]] = coef[[j, 0]];
            dalpha[[g, j]] = coef[[q + j, 0]] / h;
        }
    }

    // (1/n) Z~'Z~, symmetrized
    let mut sigma_hat = Array2::zeros((p, p));
    for i in 0..n {
        let row = z_tilde.row(i);
        for a in 0..p {
            for c in a..p {
                sigma_hat[[a, c]] += row[a] * row[c];
            }
        }
    }
    for a in 0..p {
        for c in 0..a {
            sigma_hat[[a, c]] = sigma_hat[[c, a]];
        }
    }
    sigma_hat /= n as f64;

    // calibration-error pieces (proposed mode only)
    let (b_hat, sigma_e_hat) = if let Some(c) = &cal {
        let b_resolved = c.bandwidth;
        let bh = nw_rows_on_v(
            z_tilde.view(),
            dataset.v.view(),
            b_resolved,
            cfg.calibration.kernel,
        )
        .map_err(|e| e.at_stage("covariance"))?;
        let mut se = Array2::zeros((p1, p1));
        for i in 0..n {
            for a in 0..p1 {
                for d in a..p1 {
                    se[[a, d]] += c.e_hat[[i, a]] * c.e_hat[[i, d]];
                }
            }
        }
        for a in 0..p1 {
            for d in 0..a {
                se[[a, d]] = se[[d, a]];
            }
        }
        se /= n as f64;
        (bh, se)
    } else {
        (Array2::zeros((n, p)), Array2::zeros((p1, p1)))
    };

    let mut fit = ProfileFit {
        mode: cfg.mode,
        theta_hat,
        se_theta: Array1::zeros(p),
        sigma2_hat,
        sigma_hat,
        sigma1_hat: Array2::zeros((p, p)),
        sigma_e_hat,
        b_hat,
        alpha_u: Array1::from(grid),
        alpha,
        dalpha,
        residuals,
        m_hat,
        trace_s,
        h,
        b,
        p1,
        kernel: cfg.kernel,
        z_hat,
        z_tilde,
        y_tilde,
        calibration: cal,
    };

    let g = g_hat_matrix(&fit, fit.beta_hat())?;
    let sigma1 = theta_covariance_from_parts(fit.sigma2_hat, &fit.sigma_hat, g.as_ref(), n)
        .map_err(|e| e.at_stage("covariance"))?;
    fit.se_theta = Array1::from_shape_fn(p, |k| sigma1[[k, k]].max(0.0).sqrt());
    fit.sigma1_hat = sigma1;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::Bandwidth;
    use approx::assert_abs_diff_eq;
    use ndarray::Array1;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    /// A dataset with known structure: xi observed (eta = xi, e = 0).
    fn toy_dataset(n: usize, seed: u64, alpha: impl Fn(f64) -> [f64; 2]) -> (Dataset, Array1<f64>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let v = Array1::from_shape_fn(n, |_| rng.gen_range(0.0..1.0));
        let xi = v.mapv(|t| 3.0 * t - 2.0 * (4.0 * std::f64::consts::PI * t).cos());
        let w = Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let x = Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let u = Array1::from_shape_fn(n, |_| rng.gen_range(0.0..3.0));
        let theta = Array1::from(vec![0.2, -1.0, 1.0]);
        let mut y = Array1::zeros(n);
        for i in 0..n {
            let a = alpha(u[i]);
            y[i] = theta[0] * xi[i] + theta[1] * w[[i, 0]] + theta[2] * w[[i, 1]]
                + a[0] * x[[i, 0]]
                + a[1] * x[[i, 1]];
        }
        let eta = xi.clone().insert_axis(Axis(1));
        let ds = Dataset {
            y,
            eta,
            v,
            w,
            x,
            u,
            xi: Some(xi.insert_axis(Axis(1))),
        };
        (ds, theta)
    }

    fn fixed_cfg(mode: FitMode, h: f64) -> FitConfig {
        FitConfig {
            h: HSelect::Fixed(h),
            kernel: KernelSpec::Gaussian,
            calibration: CalibrationConfig {
                order: 1,
                bandwidth: Bandwidth::RuleOfThumb,
                kernel: KernelSpec::Gaussian,
            },
            mode: FitMode::Benchmark,
            alpha_grid: None,
            cv_grid_points: 10,
        }
        .with_mode(mode)
    }

    impl FitConfig {
        fn with_mode(mut self, mode: FitMode) -> Self {
            self.mode = mode;
            self
        }
    }

    #[test]
    fn theta_exact_when_alpha_zero_and_noiseless() {
        let (ds, theta) = toy_dataset(120, 1, |_| [0.0, 0.0]);
        let fit = fit_pipeline(&ds, &fixed_cfg(FitMode::Benchmark, 0.4)).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(fit.theta_hat[k], theta[k], epsilon = 1e-9);
        }
        assert!(fit.sigma2_hat < 1e-18);
    }

    #[test]
    fn fit_theta_with_zero_smoother_is_ols() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 50;
        let z = Array2::from_shape_fn((n, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let y = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let s = Array2::zeros((n, n));
        let theta = fit_theta(z.view(), y.view(), s.view()).unwrap();
        // OLS oracle via normal equations
        let ztz = z.t().dot(&z);
        let zty = z.t().dot(&y);
        let flat: Vec<f64> = ztz.iter().copied().collect();
        let oracle = solve_sym_checked("test", &flat, 3, zty.as_slice().unwrap(), 1).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(theta[k], oracle[k], epsilon = 1e-10);
        }
    }

    #[test]
    fn varying_fit_recovers_linear_coefficients_exactly() {
        // Theta = 0, eps = 0, alpha globally linear in u.
        let (mut ds, _) = toy_dataset(150, 5, |u| [0.5 + 2.0 * u, -1.0 + 0.3 * u]);
        // zero out the parametric part
        for i in 0..ds.n() {
            let a0 = 0.5 + 2.0 * ds.u[i];
            let a1 = -1.0 + 0.3 * ds.u[i];
            ds.y[i] = a0 * ds.x[[i, 0]] + a1 * ds.x[[i, 1]];
        }
        let theta = Array1::zeros(3);
        let (a, b) = fit_varying(
            1.3,
            ds.x.view(),
            ds.u.view(),
            ds.y.view(),
            Array2::zeros((ds.n(), 3)).view(),
            theta.view(),
            0.5,
            KernelSpec::Gaussian,
        )
        .unwrap();
        assert_abs_diff_eq!(a[0], 0.5 + 2.0 * 1.3, epsilon = 1e-8);
        assert_abs_diff_eq!(a[1], -1.0 + 0.3 * 1.3, epsilon = 1e-8);
        assert_abs_diff_eq!(b[0], 2.0, epsilon = 1e-7);
        assert_abs_diff_eq!(b[1], 0.3, epsilon = 1e-7);
    }

    #[test]
    fn varying_fit_outside_range_compact_kernel_fails() {
        let (ds, _) = toy_dataset(60, 7, |u| [u, 1.0]);
        let theta = Array1::zeros(3);
        let err = fit_varying(
            25.0,
            ds.x.view(),
            ds.u.view(),
            ds.y.view(),
            Array2::zeros((ds.n(), 3)).view(),
            theta.view(),
            0.3,
            KernelSpec::Epanechnikov,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SingularDesign { .. }));
    }

    #[test]
    fn sup_error_of_varying_fit_within_bias_bound() {
        // alpha_1(u) = exp(-u^2) + sin(pi u), n = 2000, h = 0.1,
        // epanechnikov kernel: sup error below 0.05 on [0.5, 2.5].
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 2000;
        let x = Array2::from_shape_fn((n, 1), |_| rng.sample::<f64, _>(StandardNormal));
        let u = Array1::from_shape_fn(n, |_| rng.gen_range(0.0..3.0));
        let alpha1 = |t: f64| (-t * t).exp() + (std::f64::consts::PI * t).sin();
        let y = Array1::from_shape_fn(n, |i| alpha1(u[i]) * x[[i, 0]]);
        let z = Array2::zeros((n, 1));
        let theta = Array1::zeros(1);
        let mut sup = 0.0f64;
        for g in 0..41 {
            let u0 = 0.5 + 2.0 * g as f64 / 40.0;
            let (a, _) = fit_varying(
                u0,
                x.view(),
                u.view(),
                y.view(),
                z.view(),
                theta.view(),
                0.1,
                KernelSpec::Epanechnikov,
            )
            .unwrap();
            sup = sup.max((a[0] - alpha1(u0)).abs());
        }
        assert!(sup < 0.05, "sup error {sup}");
    }

    #[test]
    fn orthogonality_of_profiled_residuals() {
        let (mut ds, _) = toy_dataset(120, 13, |u| [(u * 1.1).sin(), 0.5 * u]);
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for i in 0..ds.n() {
            ds.y[i] += rng.sample::<f64, _>(StandardNormal);
        }
        let fit = fit_pipeline(&ds, &fixed_cfg(FitMode::Benchmark, 0.4)).unwrap();
        // Z~' (Y - Z_hat theta - M_hat) = 0
        let grad = fit.z_tilde.t().dot(&fit.residuals);
        for k in 0..3 {
            assert_abs_diff_eq!(grad[k], 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn affine_equivariance_in_y() {
        let (mut ds, _) = toy_dataset(100, 17, |u| [u.cos(), 1.0]);
        let mut rng = ChaCha12Rng::seed_from_u64(18);
        for i in 0..ds.n() {
            ds.y[i] += 0.5 * rng.sample::<f64, _>(StandardNormal);
        }
        let cfg = fixed_cfg(FitMode::Benchmark, 0.5);
        let fit0 = fit_pipeline(&ds, &cfg).unwrap();
        let shift = Array1::from(vec![0.7, -0.2, 1.5]);
        let mut ds2 = ds.clone();
        let (z_hat, _) = assemble_z_hat(&ds, &cfg).unwrap();
        let extra = z_hat.dot(&shift);
        for i in 0..ds.n() {
            ds2.y[i] += extra[i];
        }
        let fit1 = fit_pipeline(&ds2, &cfg).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(fit1.theta_hat[k], fit0.theta_hat[k] + shift[k], epsilon = 1e-9);
        }
    }

    #[test]
    fn scaling_y_scales_sigma2_exactly() {
        let (mut ds, _) = toy_dataset(80, 19, |u| [u, -u]);
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        for i in 0..ds.n() {
            ds.y[i] += rng.sample::<f64, _>(StandardNormal);
        }
        let cfg = fixed_cfg(FitMode::Benchmark, 0.5);
        let fit0 = fit_pipeline(&ds, &cfg).unwrap();
        let mut ds2 = ds.clone();
        ds2.y.mapv_inplace(|y| 2.0 * y);
        let fit1 = fit_pipeline(&ds2, &cfg).unwrap();
        assert_eq!(fit1.sigma2_hat, 4.0 * fit0.sigma2_hat);
    }

    #[test]
    fn benchmark_covariance_is_textbook_profile_variance() {
        let (mut ds, _) = toy_dataset(90, 23, |u| [u.sin(), u]);
        let mut rng = ChaCha12Rng::seed_from_u64(24);
        for i in 0..ds.n() {
            ds.y[i] += rng.sample::<f64, _>(StandardNormal);
        }
        let fit = fit_pipeline(&ds, &fixed_cfg(FitMode::Benchmark, 0.5)).unwrap();
        let n = ds.n() as f64;
        // sigma^2 (Z~'Z~/n)^{-1} / n
        let p = 3;
        let flat: Vec<f64> = fit.sigma_hat.iter().copied().collect();
        let eye: Vec<f64> = (0..p * p)
            .map(|i| if i % (p + 1) == 0 { 1.0 } else { 0.0 })
            .collect();
        let inv = solve_sym_checked("test", &flat, p, &eye, p).unwrap();
        for r in 0..p {
            for c in 0..p {
                let expected = fit.sigma2_hat * inv[r * p + c] / n;
                assert_abs_diff_eq!(fit.sigma1_hat[[r, c]], expected, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn proposed_equals_benchmark_with_perfect_calibration() {
        let (mut ds, _) = toy_dataset(100, 29, |u| [u.cos(), 0.3 * u]);
        let mut rng = ChaCha12Rng::seed_from_u64(30);
        for i in 0..ds.n() {
            ds.y[i] += rng.sample::<f64, _>(StandardNormal);
        }
        let cfg = fixed_cfg(FitMode::Benchmark, 0.5);
        let bench = fit_pipeline(&ds, &cfg).unwrap();
        // proposed plumbing with xi_hat set to the true xi
        let cal = CalibratedCovariates {
            xi_hat: ds.xi.clone().unwrap(),
            e_hat: Array2::zeros((ds.n(), 1)),
            config: cfg.calibration,
            bandwidth: 0.05,
        };
        let cfg_p = fixed_cfg(FitMode::Proposed, 0.5);
        let prop = fit_with_calibrated(&ds, &cfg_p, cal).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(prop.theta_hat[k], bench.theta_hat[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_dataset_fails_validation_before_numerics() {
        let ds = Dataset {
            y: Array1::zeros(0),
            eta: Array2::zeros((0, 1)),
            v: Array1::zeros(0),
            w: Array2::zeros((0, 0)),
            x: Array2::zeros((0, 1)),
            u: Array1::zeros(0),
            xi: None,
        };
        let err = fit_pipeline(&ds, &FitConfig::default()).unwrap_err();
        assert!(matches!(err.root(), Error::Validation(_)));
    }

    #[test]
    fn sigma1_symmetric_psd_on_random_instances() {
        // 1000 random small instances: eigenvalues >= -1e-10.
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for rep in 0..1000 {
            let n = rng.gen_range(25..45);
            let v = Array1::from_shape_fn(n, |_| rng.gen_range(0.0..1.0));
            let xi = v.mapv(|t| t * t + 0.3 * t);
            let w = Array2::from_shape_fn((n, 1), |_| rng.sample::<f64, _>(StandardNormal));
            let x = Array2::from_shape_fn((n, 1), |_| rng.sample::<f64, _>(StandardNormal));
            let u = Array1::from_shape_fn(n, |_| rng.gen_range(0.0..1.0));
            let mut y = Array1::zeros(n);
            for i in 0..n {
                y[i] = 0.5 * xi[i] - w[[i, 0]] + u[i] * x[[i, 0]]
                    + 0.3 * rng.sample::<f64, _>(StandardNormal);
            }
            let eta = Array2::from_shape_fn((n, 1), |(i, _)| {
                xi[i] + 0.4 * rng.sample::<f64, _>(StandardNormal)
            });
            let ds = Dataset {
                y,
                eta,
                v,
                w,
                x,
                u,
                xi: None,
            };
            let cfg = FitConfig {
                h: HSelect::Fixed(0.3),
                kernel: KernelSpec::Gaussian,
                calibration: CalibrationConfig {
                    order: 1,
                    bandwidth: Bandwidth::RuleOfThumb,
                    kernel: KernelSpec::Gaussian,
                },
                mode: FitMode::Proposed,
                alpha_grid: Some(vec![0.5]),
                cv_grid_points: 5,
            };
            let fit = match fit_pipeline(&ds, &cfg) {
                Ok(f) => f,
                Err(_) => continue, // rare singular draws are fine to skip
            };
            let p = fit.p();
            for r in 0..p {
                for c in 0..p {
                    assert_abs_diff_eq!(
                        fit.sigma1_hat[[r, c]],
                        fit.sigma1_hat[[c, r]],
                        epsilon = 1e-12
                    );
                }
            }
            let flat: Vec<f64> = fit.sigma1_hat.iter().copied().collect();
            let ev = crate::wls::eigenvalues_sym(&flat, p);
            assert!(
                ev.iter().all(|&l| l >= -1e-10),
                "rep {rep}: eigenvalues {ev:?}"
            );
        }
    }
}
