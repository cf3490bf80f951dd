//! Leave-one-out cross-validation for the coefficient bandwidth.
//!
//! `CV(h) = n^{-1} sum_i {Y_i - alpha_hat_{h,-i}'(U_i) X_i - Theta_hat_{n,-i}' Z_hat_i}^2`
//! where both estimators are recomputed on the sample with row `i`
//! removed; the calibrated covariates stay fixed at their full-sample
//! values. Removing a row is a rank-one downdate of every local normal
//! matrix, which keeps the exact refit affordable: the full-sample local
//! moments are accumulated once per bandwidth and each leave-one-out
//! subfit subtracts the left-out row's contribution before solving.

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fit::{assemble_z_hat, solve_sym_checked, FitConfig};
use crate::kernel::KernelSpec;
use crate::wls::lu_solve_in_place;

/// Log-spaced candidate bandwidths over `[0.02, 1.0] x range(U)`.
pub fn default_cv_grid(u: ndarray::ArrayView1<f64>, points: usize) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in u.iter() {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let range = (hi - lo).max(f64::MIN_POSITIVE);
    log_spaced(0.02 * range, 1.0 * range, points)
}

pub fn log_spaced(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![lo];
    }
    let (la, lb) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (la + (lb - la) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Full-sample local moments at every sample center for one bandwidth.
struct LocalMoments {
    /// n x m^2 row-major normal matrices, m = 2q.
    g: Vec<f64>,
    /// n x (m*k) cross products against `[Z_hat | Y]`, k = p + 1.
    t: Vec<f64>,
    /// n x n kernel weights, w[j*n + i] = K_h(U_i - U_j).
    w: Vec<f64>,
    m: usize,
    k: usize,
}

fn precompute(
    dataset: &Dataset,
    z_hat: ArrayView2<f64>,
    h: f64,
    kernel: KernelSpec,
) -> LocalMoments {
    let n = dataset.n();
    let q = dataset.q();
    let p = z_hat.ncols();
    let m = 2 * q;
    let k = p + 1;
    let mut w = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            w[j * n + i] = kernel.density((dataset.u[i] - dataset.u[j]) / h) / h;
        }
    }
    let mut g = vec![0.0; n * m * m];
    let mut t = vec![0.0; n * m * k];
    let mut d = vec![0.0; m];
    for j in 0..n {
        let gj = &mut g[j * m * m..(j + 1) * m * m];
        let tj = &mut t[j * m * k..(j + 1) * m * k];
        for i in 0..n {
            let wij = w[j * n + i];
            if wij == 0.0 {
                continue;
            }
            let tt = (dataset.u[i] - dataset.u[j]) / h;
            for a in 0..q {
                d[a] = dataset.x[[i, a]];
                d[q + a] = tt * dataset.x[[i, a]];
            }
            for a in 0..m {
                let wda = wij * d[a];
                for c in a..m {
                    gj[a * m + c] += wda * d[c];
                }
                for col in 0..p {
                    tj[a * k + col] += wda * z_hat[[i, col]];
                }
                tj[a * k + p] += wda * dataset.y[i];
            }
        }
        for a in 0..m {
            for c in 0..a {
                gj[a * m + c] = gj[c * m + a];
            }
        }
    }
    LocalMoments { g, t, w, m, k }
}

/// Exact leave-one-out cross-validation score at bandwidth `h`.
pub fn cv_score(h: f64, dataset: &Dataset, cfg: &FitConfig) -> Result<f64> {
    dataset.validate()?;
    let (z_hat, _) = assemble_z_hat(dataset, cfg)?;
    cv_score_with_zhat(h, dataset, cfg, z_hat.view())
}

pub(crate) fn cv_score_with_zhat(
    h: f64,
    dataset: &Dataset,
    cfg: &FitConfig,
    z_hat: ArrayView2<f64>,
) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidBandwidth(h));
    }
    let n = dataset.n();

    let p = z_hat.ncols();
    let moments = precompute(dataset, z_hat, h, cfg.kernel);
    let m = moments.m;
    let k = moments.k;

    let errors: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0; m * m], vec![0.0; m * k], vec![0.0; m], vec![0.0; p * p], vec![0.0; p]),
            |(gbuf, tbuf, dbuf, nbuf, rbuf), i| {
                cv_leave_one_out(
                    i, dataset, z_hat, &moments, h, gbuf, tbuf, dbuf, nbuf, rbuf,
                )
            },
        )
        .collect();

    let mut acc = 0.0;
    for e in errors {
        acc += e?;
    }
    Ok(acc / n as f64)
}

#[allow(clippy::too_many_arguments)]
fn cv_leave_one_out(
    i: usize,
    dataset: &Dataset,
    z_hat: ArrayView2<f64>,
    moments: &LocalMoments,
    h: f64,
    gbuf: &mut [f64],
    tbuf: &mut [f64],
    dbuf: &mut [f64],
    nbuf: &mut [f64],
    rbuf: &mut [f64],
) -> Result<f64> {
    let n = dataset.n();
    let q = dataset.q();
    let p = z_hat.ncols();
    let m = moments.m;
    let k = moments.k;
    let singular = |j: usize| Error::SingularDesign {
        location: format!("leave-one-out subfit dropping row {i}, local design at row {j}"),
        condition: f64::INFINITY,
    };

    // accumulate the profiled normal equations over j != i
    nbuf.iter_mut().for_each(|v| *v = 0.0);
    rbuf.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..n {
        if j == i {
            continue;
        }
        // downdate the local moments at center U_j by row i
        let wji = moments.w[j * n + i];
        let tt = (dataset.u[i] - dataset.u[j]) / h;
        for a in 0..q {
            dbuf[a] = dataset.x[[i, a]];
            dbuf[q + a] = tt * dataset.x[[i, a]];
        }
        let gj = &moments.g[j * m * m..(j + 1) * m * m];
        let tj = &moments.t[j * m * k..(j + 1) * m * k];
        for a in 0..m {
            let wda = wji * dbuf[a];
            for c in 0..m {
                gbuf[a * m + c] = gj[a * m + c] - wda * dbuf[c];
            }
            for col in 0..p {
                tbuf[a * k + col] = tj[a * k + col] - wda * z_hat[[i, col]];
            }
            tbuf[a * k + p] = tj[a * k + p] - wda * dataset.y[i];
        }
        if !lu_solve_in_place(gbuf, m, tbuf, k) {
            return Err(singular(j));
        }
        // profiled row j: z~ = z_hat_j - X_j . a_z, y~ = y_j - X_j . a_y
        let xrow = dataset.x.row(j);
        let mut zt = [0.0f64; 16];
        debug_assert!(p < 16);
        for col in 0..p {
            let mut fitted = 0.0;
            for a in 0..q {
                fitted += xrow[a] * tbuf[a * k + col];
            }
            zt[col] = z_hat[[j, col]] - fitted;
        }
        let mut fitted_y = 0.0;
        for a in 0..q {
            fitted_y += xrow[a] * tbuf[a * k + p];
        }
        let yt = dataset.y[j] - fitted_y;
        for a in 0..p {
            rbuf[a] += zt[a] * yt;
            for c in a..p {
                nbuf[a * p + c] += zt[a] * zt[c];
            }
        }
    }
    for a in 0..p {
        for c in 0..a {
            nbuf[a * p + c] = nbuf[c * p + a];
        }
    }
    let theta = solve_sym_checked("cv_theta", nbuf, p, rbuf, 1)
        .map_err(|e| e.at_stage("cv_score"))?;

    // alpha_{-i}(U_i): downdate the moments at center U_i by its own row
    let wii = moments.w[i * n + i];
    for a in 0..q {
        dbuf[a] = dataset.x[[i, a]];
        dbuf[q + a] = 0.0;
    }
    let gi = &moments.g[i * m * m..(i + 1) * m * m];
    let ti = &moments.t[i * m * k..(i + 1) * m * k];
    // response for the varying fit is Y - Z_hat theta: T(Y) - T(Z) theta
    let mut rhs_alpha = [0.0f64; 16];
    debug_assert!(m < 16);
    for a in 0..m {
        let wda = wii * dbuf[a];
        for c in 0..m {
            gbuf[a * m + c] = gi[a * m + c] - wda * dbuf[c];
        }
        let mut ty = ti[a * k + p] - wda * dataset.y[i];
        for col in 0..p {
            let tz = ti[a * k + col] - wda * z_hat[[i, col]];
            ty -= tz * theta[col];
        }
        rhs_alpha[a] = ty;
    }
    if !lu_solve_in_place(gbuf, m, &mut rhs_alpha[..m], 1) {
        return Err(singular(i));
    }
    let mut alpha_pred = 0.0;
    for a in 0..q {
        alpha_pred += dataset.x[[i, a]] * rhs_alpha[a];
    }
    let mut lin_pred = 0.0;
    for col in 0..p {
        lin_pred += z_hat[[i, col]] * theta[col];
    }
    let err = dataset.y[i] - lin_pred - alpha_pred;
    Ok(err * err)
}

/// Minimize `CV(h)` over a candidate grid; candidates whose subfits fail
/// are skipped, ties break toward the smaller bandwidth.
pub fn select_h(grid: &[f64], dataset: &Dataset, cfg: &FitConfig) -> Result<f64> {
    dataset.validate()?;
    let (z_hat, _) = assemble_z_hat(dataset, cfg)?;
    select_h_with_zhat(grid, dataset, cfg, z_hat.view())
}

pub(crate) fn select_h_with_zhat(
    grid: &[f64],
    dataset: &Dataset,
    cfg: &FitConfig,
    z_hat: ArrayView2<f64>,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::BandwidthSelection("empty candidate grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best: Option<(f64, f64)> = None;
    let mut last_err: Option<Error> = None;
    for &h in &sorted {
        match cv_score_with_zhat(h, dataset, cfg, z_hat) {
            Ok(score) => {
                if best.map_or(true, |(_, s)| score < s) {
                    best = Some((h, score));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((h, _)) => Ok(h),
        None => Err(Error::BandwidthSelection(format!(
            "every candidate bandwidth failed; last error: {}",
            last_err.map(|e| e.to_string()).unwrap_or_default()
        ))),
    }
}

/// CV score matrix for reporting: `(h, score)` pairs over a grid.
pub fn cv_profile(grid: &[f64], dataset: &Dataset, cfg: &FitConfig) -> Result<Vec<(f64, f64)>> {
    dataset.validate()?;
    let (z_hat, _) = assemble_z_hat(dataset, cfg)?;
    let mut out = Vec::with_capacity(grid.len());
    for &h in grid {
        let score = cv_score_with_zhat(h, dataset, cfg, z_hat.view())?;
        out.push((h, score));
    }
    Ok(out)
}
