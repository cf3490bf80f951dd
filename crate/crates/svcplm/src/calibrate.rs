//! Calibration of error-prone covariates.
//!
//! The unobserved covariate functions `xi_k(v) = E(eta_k | V = v)` are
//! recovered by local polynomial regression of the surrogate columns on
//! the ancillary variable. The intercept of the local fit at `v` is the
//! calibrated value. A replicate-based ratio estimator is provided for
//! the two-measurement setting without a surrogate.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::wls::lu_solve_in_place;

/// Bandwidth request: explicit value or the `sd(V) n^{-1/3}` rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    #[default]
    RuleOfThumb,
}

/// Configuration of the local polynomial calibration step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Polynomial order `r` of the local fit; local linear by default.
    pub order: usize,
    pub bandwidth: Bandwidth,
    pub kernel: KernelSpec,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            order: 1,
            bandwidth: Bandwidth::RuleOfThumb,
            kernel: KernelSpec::Gaussian,
        }
    }
}

impl CalibrationConfig {
    pub fn resolve_bandwidth(&self, v: ArrayView1<f64>) -> Result<f64> {
        match self.bandwidth {
            Bandwidth::Fixed(b) => {
                if b > 0.0 && b.is_finite() {
                    Ok(b)
                } else {
                    Err(Error::InvalidBandwidth(b))
                }
            }
            Bandwidth::RuleOfThumb => rule_of_thumb_b(v),
        }
    }
}

/// Calibrated covariate values at the sample points together with the
/// calibration residuals `e_hat = eta - xi_hat(V)`.
#[derive(Debug, Clone)]
pub struct CalibratedCovariates {
    pub xi_hat: Array2<f64>,
    pub e_hat: Array2<f64>,
    pub config: CalibrationConfig,
    /// Bandwidth actually used (rule-of-thumb resolved).
    pub bandwidth: f64,
}

/// Rule-of-thumb calibration bandwidth `sd(V) · n^{-1/3}`.
pub fn rule_of_thumb_b(v: ArrayView1<f64>) -> Result<f64> {
    let n = v.len();
    if n < 2 {
        return Err(Error::DegenerateSample(format!(
            "need at least 2 observations for the bandwidth rule, got {n}"
        )));
    }
    let mean = v.sum() / n as f64;
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    let sd = (ss / (n as f64 - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateSample(
            "ancillary variable V is constant".into(),
        ));
    }
    Ok(sd * (n as f64).powf(-1.0 / 3.0))
}

/// Sort permutation of `v` used to window compact kernels.
pub(crate) struct SortedIndex {
    pub order: Vec<usize>,
    pub sorted: Vec<f64>,
}

impl SortedIndex {
    pub fn new(v: ArrayView1<f64>) -> Self {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let sorted = order.iter().map(|&i| v[i]).collect();
        SortedIndex { order, sorted }
    }

    /// Index range of points with `|v_j - v0| <= halfwidth`.
    pub fn window(&self, v0: f64, halfwidth: f64) -> (usize, usize) {
        let lo = self.sorted.partition_point(|&x| x < v0 - halfwidth);
        let hi = self.sorted.partition_point(|&x| x <= v0 + halfwidth);
        (lo, hi)
    }
}

/// One local polynomial solve. Returns the full coefficient vector of
/// the fit in powers of `(v - v0)/b`; the first entry is the intercept.
fn local_poly_fit(
    v0: f64,
    sorted: &SortedIndex,
    v: ArrayView1<f64>,
    response: ArrayView1<f64>,
    order: usize,
    b: f64,
    kernel: KernelSpec,
) -> Result<Vec<f64>> {
    let m = order + 1;
    let (lo, hi) = if kernel.compact_support() {
        sorted.window(v0, b)
    } else {
        (0, sorted.order.len())
    };
    let mut g = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    let mut powers = vec![0.0; m];
    for s in lo..hi {
        let j = sorted.order[s];
        let t = (v[j] - v0) / b;
        let w = kernel.density(t) / b;
        if w == 0.0 {
            continue;
        }
        powers[0] = 1.0;
        for d in 1..m {
            powers[d] = powers[d - 1] * t;
        }
        for a in 0..m {
            let wp = w * powers[a];
            rhs[a] += wp * response[j];
            for c in a..m {
                g[a * m + c] += wp * powers[c];
            }
        }
    }
    for a in 0..m {
        for c in 0..a {
            g[a * m + c] = g[c * m + a];
        }
    }
    if !lu_solve_in_place(&mut g, m, &mut rhs, 1) {
        return Err(Error::SingularDesign {
            location: format!("calibration at v0={v0}"),
            condition: f64::INFINITY,
        });
    }
    Ok(rhs)
}

/// Local polynomial estimate of `xi_k(v0)` from one surrogate column.
pub fn calibrate_at(
    v0: f64,
    v: ArrayView1<f64>,
    eta_k: ArrayView1<f64>,
    cfg: &CalibrationConfig,
) -> Result<f64> {
    if v.len() != eta_k.len() {
        return Err(Error::Validation(format!(
            "calibrate_at length mismatch: V {} vs eta {}",
            v.len(),
            eta_k.len()
        )));
    }
    let b = cfg.resolve_bandwidth(v)?;
    let sorted = SortedIndex::new(v);
    local_poly_fit(v0, &sorted, v, eta_k, cfg.order, b, cfg.kernel).map(|c| c[0])
}

/// Calibrate every surrogate column at each sample point and store the
/// calibration residuals.
pub fn calibrate_all(
    eta: ArrayView2<f64>,
    v: ArrayView1<f64>,
    cfg: &CalibrationConfig,
) -> Result<CalibratedCovariates> {
    let (n, p1) = eta.dim();
    if v.len() != n {
        return Err(Error::Validation(format!(
            "calibrate_all length mismatch: V {} vs eta rows {n}",
            v.len()
        )));
    }
    let b = cfg.resolve_bandwidth(v)?;
    let sorted = SortedIndex::new(v);
    let mut xi_hat = Array2::zeros((n, p1));
    for k in 0..p1 {
        let col = eta.column(k);
        let fitted: Vec<Result<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                local_poly_fit(v[i], &sorted, v, col, cfg.order, b, cfg.kernel)
                    .map(|c| c[0])
                    .map_err(|e| match e {
                        Error::SingularDesign { condition, .. } => Error::SingularDesign {
                            location: format!("calibration of column {k} at sample index {i}"),
                            condition,
                        },
                        other => other,
                    })
            })
            .collect();
        for (i, r) in fitted.into_iter().enumerate() {
            xi_hat[[i, k]] = r?;
        }
    }
    let e_hat = &eta - &xi_hat;
    Ok(CalibratedCovariates {
        xi_hat,
        e_hat,
        config: *cfg,
        bandwidth: b,
    })
}

/// Evaluate the calibrated curves on an arbitrary grid (for plotting).
pub fn calibrate_grid(
    points: ArrayView1<f64>,
    eta: ArrayView2<f64>,
    v: ArrayView1<f64>,
    cfg: &CalibrationConfig,
) -> Result<Array2<f64>> {
    let (_, p1) = eta.dim();
    let b = cfg.resolve_bandwidth(v)?;
    let sorted = SortedIndex::new(v);
    let mut out = Array2::zeros((points.len(), p1));
    for k in 0..p1 {
        let col = eta.column(k);
        for (g, &v0) in points.iter().enumerate() {
            out[[g, k]] = local_poly_fit(v0, &sorted, v, col, cfg.order, b, cfg.kernel)?[0];
        }
    }
    Ok(out)
}

/// Replicate-based ratio estimator of `xi` from two independent
/// measurements `V1 = xi + u1`, `V2 = xi + u2`, evaluated at each entry
/// of `V1`.
pub fn replicate_calibrate(
    v1: ArrayView1<f64>,
    v2: ArrayView1<f64>,
    h: f64,
    kernel: KernelSpec,
) -> Result<Array1<f64>> {
    replicate_calibrate_at(v1, v2, h, kernel, v1)
}

/// Replicate-based ratio estimator evaluated on an arbitrary point set.
pub fn replicate_calibrate_at(
    v1: ArrayView1<f64>,
    v2: ArrayView1<f64>,
    h: f64,
    kernel: KernelSpec,
    points: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let n = v1.len();
    if n < 2 || v2.len() != n {
        return Err(Error::Validation(format!(
            "replicate_calibrate needs two equally sized samples with n >= 2, got {} and {}",
            n,
            v2.len()
        )));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidBandwidth(h));
    }
    let mut out = Array1::zeros(points.len());
    for (j, &v) in points.iter().enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let k2 = kernel.density((v2[i] - v) / h) / h;
            let k1 = kernel.density((v1[i] - v) / h) / h;
            num += v1[i] * (k2 + k1);
            den += k2 + k1;
        }
        if den <= 0.0 {
            return Err(Error::SingularDesign {
                location: format!("replicate calibration at v={v}"),
                condition: f64::INFINITY,
            });
        }
        out[j] = num / den;
    }
    Ok(out)
}
