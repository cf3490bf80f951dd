//! Kernel functions and their moments.
//!
//! Kernels serve two roles: `L` weights the covariate calibration on `V`
//! and `K` weights the varying-coefficient smoother on `U`. Both are
//! symmetric probability densities. The Gaussian kernel is the default;
//! Epanechnikov and uniform kernels have compact support `[-1, 1]` and
//! allow windowed evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel family used for local weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelSpec {
    #[default]
    Gaussian,
    Epanechnikov,
    Uniform,
}

const INV_SQRT_2PI: f64 = 0.398942280401432677939946;

impl KernelSpec {
    /// Density value at `u` (unscaled).
    pub fn density(&self, u: f64) -> f64 {
        match self {
            KernelSpec::Gaussian => INV_SQRT_2PI * (-0.5 * u * u).exp(),
            KernelSpec::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            KernelSpec::Uniform => {
                if u.abs() <= 1.0 {
                    0.5
                } else {
                    0.0
                }
            }
        }
    }

    /// Whether the kernel vanishes outside `[-1, 1]`.
    pub fn compact_support(&self) -> bool {
        !matches!(self, KernelSpec::Gaussian)
    }

    /// Half-width of the support used for quadrature and windowing.
    /// The Gaussian is integrated over `[-10, 10]`; beyond that the mass
    /// is below 1e-21 for the moment orders we use.
    pub fn support_halfwidth(&self) -> f64 {
        if self.compact_support() {
            1.0
        } else {
            10.0
        }
    }
}

/// Scaled kernel evaluation `K(u/h)/h`.
pub fn kernel_eval(kernel: KernelSpec, u: f64, bandwidth: f64) -> Result<f64> {
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidBandwidth(bandwidth));
    }
    Ok(kernel.density(u / bandwidth) / bandwidth)
}

/// Kernel moments `mu_j = ∫ u^j K(u) du` and `nu_j = ∫ u^j K(u)^2 du`.
///
/// Odd-order moments of these symmetric kernels vanish exactly and are
/// short-circuited; even orders are computed by adaptive quadrature.
pub fn kernel_moments(kernel: KernelSpec, j: u32) -> Result<(f64, f64)> {
    if j % 2 == 1 {
        return Ok((0.0, 0.0));
    }
    let a = -kernel.support_halfwidth();
    let b = kernel.support_halfwidth();
    let tol = 1e-11;
    let mu = adaptive_simpson(&|u: f64| u.powi(j as i32) * kernel.density(u), a, b, tol)?;
    let nu = adaptive_simpson(
        &|u: f64| {
            let k = kernel.density(u);
            u.powi(j as i32) * k * k
        },
        a,
        b,
        tol,
    )?;
    Ok((mu, nu))
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Option<f64> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return Some(left + right + delta / 15.0);
        }
        if depth == 0 {
            return None;
        }
        let l = recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
        let r = recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
        Some(l + r)
    }

    let fa = f(a);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48).ok_or(Error::NonConvergence { tol, a, b })
}
