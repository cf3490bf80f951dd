//! Weighted polynomial least squares on small dense designs.
//!
//! Every local fit in the crate reduces to the same normal-equation
//! solve `(D'WD + ridge·I) a = D'Wy`. The solver uses partial-pivot LU
//! on the normal matrix; near-singular designs are rejected by a
//! condition-number estimate instead of being silently regularized.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Condition-number limit above which an unridged solve is refused.
pub const CONDITION_LIMIT: f64 = 1e12;

/// A weighted least-squares problem `min_a Σ w_i (y_i - d_i'a)^2 + ridge·|a|^2`.
#[derive(Debug, Clone)]
pub struct WlsProblem {
    pub design: Array2<f64>,
    pub response: Array1<f64>,
    pub weights: Array1<f64>,
    pub ridge: f64,
}

impl WlsProblem {
    pub fn new(design: Array2<f64>, response: Array1<f64>, weights: Array1<f64>) -> Self {
        WlsProblem {
            design,
            response,
            weights,
            ridge: 0.0,
        }
    }

    /// Opt-in ridge of `1e-8 · tr(D'WD)/m`.
    pub fn with_auto_ridge(mut self) -> Self {
        let (n, m) = self.design.dim();
        let mut trace = 0.0;
        for j in 0..m {
            for i in 0..n {
                let d = self.design[[i, j]];
                trace += self.weights[i] * d * d;
            }
        }
        self.ridge = 1e-8 * trace / m as f64;
        self
    }

    fn validate(&self) -> Result<()> {
        let (n, m) = self.design.dim();
        if self.response.len() != n || self.weights.len() != n {
            return Err(Error::Validation(format!(
                "wls dimension mismatch: design {}x{}, response {}, weights {}",
                n,
                m,
                self.response.len(),
                self.weights.len()
            )));
        }
        if m == 0 || n == 0 {
            return Err(Error::Validation("empty wls problem".into()));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::Validation(format!(
                "ridge must be a nonnegative finite scalar, got {}",
                self.ridge
            )));
        }
        for (i, &w) in self.weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Validation(format!(
                    "weight {i} is not finite and nonnegative: {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Solve a [`WlsProblem`], refusing designs whose weighted normal matrix
/// has condition number above [`CONDITION_LIMIT`] unless a ridge is set.
pub fn solve_wls(problem: &WlsProblem) -> Result<Array1<f64>> {
    problem.validate()?;
    let (n, m) = problem.design.dim();
    let mut normal = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    for i in 0..n {
        let w = problem.weights[i];
        if w == 0.0 {
            continue;
        }
        let row = problem.design.row(i);
        for a in 0..m {
            let wda = w * row[a];
            rhs[a] += wda * problem.response[i];
            for b in a..m {
                normal[a * m + b] += wda * row[b];
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            normal[a * m + b] = normal[b * m + a];
        }
    }

    let condition = condition_sym(&normal, m);
    if problem.ridge == 0.0 && !(condition <= CONDITION_LIMIT) {
        return Err(Error::SingularDesign {
            location: "wls normal matrix".into(),
            condition,
        });
    }
    if problem.ridge > 0.0 {
        for a in 0..m {
            normal[a * m + a] += problem.ridge;
        }
    }
    if !lu_solve_in_place(&mut normal, m, &mut rhs, 1) {
        return Err(Error::SingularDesign {
            location: "wls normal matrix".into(),
            condition,
        });
    }
    Ok(Array1::from(rhs))
}

/// Condition number of a symmetric matrix stored row-major, via its
/// eigenvalue spread. Returns `f64::INFINITY` when the smallest
/// eigenvalue is nonpositive or entries are not finite.
pub(crate) fn condition_sym(a: &[f64], m: usize) -> f64 {
    if a.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let mat = DMatrix::from_row_slice(m, m, a);
    let eig = mat.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    if lo <= 0.0 || hi <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Eigenvalues of a symmetric matrix stored row-major, ascending.
#[allow(dead_code)]
pub(crate) fn eigenvalues_sym(a: &[f64], m: usize) -> Vec<f64> {
    let mat = DMatrix::from_row_slice(m, m, a);
    let mut ev: Vec<f64> = mat.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// In-place LU solve with partial pivoting for a small row-major system.
/// `a` is `n x n`, `rhs` holds `nrhs` columns stored row-major
/// (`rhs[i * nrhs + k]`). Returns false on a vanishing pivot.
pub(crate) fn lu_solve_in_place(a: &mut [f64], n: usize, rhs: &mut [f64], nrhs: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(rhs.len(), n * nrhs);
    let mut scale = 0.0f64;
    for &v in a.iter() {
        if !v.is_finite() {
            return false;
        }
        scale = scale.max(v.abs());
    }
    if scale == 0.0 {
        return false;
    }
    let tiny = scale * 1e-13;

    for col in 0..n {
        // pivot selection
        let mut pivot_row = col;
        let mut pivot_val = a[col * n + col].abs();
        for r in (col + 1)..n {
            let v = a[r * n + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val <= tiny {
            return false;
        }
        if pivot_row != col {
            for c in 0..n {
                a.swap(col * n + c, pivot_row * n + c);
            }
            for k in 0..nrhs {
                rhs.swap(col * nrhs + k, pivot_row * nrhs + k);
            }
        }
        let inv = 1.0 / a[col * n + col];
        for r in (col + 1)..n {
            let factor = a[r * n + col] * inv;
            if factor == 0.0 {
                continue;
            }
            a[r * n + col] = 0.0;
            for c in (col + 1)..n {
                a[r * n + c] -= factor * a[col * n + c];
            }
            for k in 0..nrhs {
                rhs[r * nrhs + k] -= factor * rhs[col * nrhs + k];
            }
        }
    }
    // back substitution
    for col in (0..n).rev() {
        let inv = 1.0 / a[col * n + col];
        for k in 0..nrhs {
            let mut acc = rhs[col * nrhs + k];
            for c in (col + 1)..n {
                acc -= a[col * n + c] * rhs[c * nrhs + k];
            }
            rhs[col * nrhs + k] = acc * inv;
        }
    }
    true
}
