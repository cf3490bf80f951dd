//! The varying-coefficient smoother.
//!
//! At each evaluation point `u` a local linear fit in `U` with slopes on
//! every column of `X` is solved; the fitted value at a sample point is
//! a linear functional of the response, so stacking the functionals for
//! `u = U_1, ..., U_n` yields the n x n smoother matrix `S`. The profile
//! machinery only ever needs `S` applied to a handful of columns, so the
//! engine works row by row and materializes `S` on request.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::calibrate::SortedIndex;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::wls::lu_solve_in_place;

/// Local linear varying-coefficient smoothing engine.
pub struct Smoother<'a> {
    pub x: ArrayView2<'a, f64>,
    pub u: ArrayView1<'a, f64>,
    pub h: f64,
    pub kernel: KernelSpec,
    sorted: SortedIndex,
}

struct Scratch {
    g: Vec<f64>,
    rhs: Vec<f64>,
    d: Vec<f64>,
}

impl<'a> Smoother<'a> {
    pub fn new(
        x: ArrayView2<'a, f64>,
        u: ArrayView1<'a, f64>,
        h: f64,
        kernel: KernelSpec,
    ) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidBandwidth(h));
        }
        if x.nrows() != u.len() {
            return Err(Error::Validation(format!(
                "smoother dimension mismatch: X has {} rows, U has {}",
                x.nrows(),
                u.len()
            )));
        }
        let sorted = SortedIndex::new(u);
        Ok(Smoother {
            x,
            u,
            h,
            kernel,
            sorted,
        })
    }

    fn n(&self) -> usize {
        self.u.len()
    }

    fn q(&self) -> usize {
        self.x.ncols()
    }

    fn window(&self, u0: f64) -> (usize, usize) {
        if self.kernel.compact_support() {
            self.sorted.window(u0, self.h)
        } else {
            (0, self.n())
        }
    }

    /// Accumulate the local normal matrix `G = D'WD` and cross products
    /// `T = D'W R` at center `u0`. `rhs` supplies the columns of `R`.
    fn accumulate(
        &self,
        u0: f64,
        rhs: Option<&ArrayView2<f64>>,
        scratch: &mut Scratch,
        k: usize,
    ) {
        let q = self.q();
        let m = 2 * q;
        scratch.g.clear();
        scratch.g.resize(m * m, 0.0);
        scratch.rhs.clear();
        scratch.rhs.resize(m * k, 0.0);
        scratch.d.clear();
        scratch.d.resize(m, 0.0);
        let (lo, hi) = self.window(u0);
        for s in lo..hi {
            let j = self.sorted.order[s];
            let t = (self.u[j] - u0) / self.h;
            let w = self.kernel.density(t) / self.h;
            if w == 0.0 {
                continue;
            }
            let xrow = self.x.row(j);
            for a in 0..q {
                scratch.d[a] = xrow[a];
                scratch.d[q + a] = t * xrow[a];
            }
            for a in 0..m {
                let wda = w * scratch.d[a];
                for c in a..m {
                    scratch.g[a * m + c] += wda * scratch.d[c];
                }
                if let Some(r) = rhs {
                    for col in 0..k {
                        scratch.rhs[a * k + col] += wda * r[[j, col]];
                    }
                }
            }
        }
        for a in 0..m {
            for c in 0..a {
                scratch.g[a * m + c] = scratch.g[c * m + a];
            }
        }
    }

    /// Local fit at an arbitrary center: returns the stacked coefficient
    /// vector `(a, h·b)` of the scaled design for each response column.
    /// Rows of the output follow the design blocks.
    pub fn local_coefficients(&self, u0: f64, rhs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let k = rhs.ncols();
        let m = 2 * self.q();
        let mut scratch = Scratch {
            g: Vec::new(),
            rhs: Vec::new(),
            d: Vec::new(),
        };
        self.accumulate(u0, Some(&rhs), &mut scratch, k);
        if !lu_solve_in_place(&mut scratch.g, m, &mut scratch.rhs, k) {
            return Err(Error::SingularDesign {
                location: format!("local design at u={u0}"),
                condition: f64::INFINITY,
            });
        }
        Ok(Array2::from_shape_vec((m, k), scratch.rhs).expect("shape"))
    }

    /// Row `i` of the smoother matrix.
    pub fn row(&self, i: usize) -> Result<Array1<f64>> {
        let n = self.n();
        let q = self.q();
        let m = 2 * q;
        let u0 = self.u[i];
        let mut scratch = Scratch {
            g: Vec::new(),
            rhs: Vec::new(),
            d: Vec::new(),
        };
        self.accumulate(u0, None, &mut scratch, 0);
        // solve G c = (X_i', 0')'
        let mut c = vec![0.0; m];
        for a in 0..q {
            c[a] = self.x[[i, a]];
        }
        if !lu_solve_in_place(&mut scratch.g, m, &mut c, 1) {
            return Err(Error::SingularDesign {
                location: format!("local design at u={u0} (row {i})"),
                condition: f64::INFINITY,
            });
        }
        let mut row = Array1::zeros(n);
        let (lo, hi) = self.window(u0);
        for s in lo..hi {
            let j = self.sorted.order[s];
            let t = (self.u[j] - u0) / self.h;
            let w = self.kernel.density(t) / self.h;
            if w == 0.0 {
                continue;
            }
            let xrow = self.x.row(j);
            let mut acc = 0.0;
            for a in 0..q {
                acc += xrow[a] * (c[a] + t * c[q + a]);
            }
            row[j] = w * acc;
        }
        Ok(row)
    }

    /// Materialize the full smoother matrix.
    pub fn matrix(&self) -> Result<Array2<f64>> {
        let n = self.n();
        let rows: Vec<Result<Array1<f64>>> = (0..n).into_par_iter().map(|i| self.row(i)).collect();
        let mut s = Array2::zeros((n, n));
        for (i, r) in rows.into_iter().enumerate() {
            s.row_mut(i).assign(&r?);
        }
        Ok(s)
    }

    /// Apply `S` to the columns of `rhs` and also return the diagonal of
    /// `S`. Entry `(i, col)` of the first output is the local fit of
    /// column `col` evaluated at `U_i`.
    pub fn apply_with_diag(&self, rhs: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let n = self.n();
        let q = self.q();
        let m = 2 * q;
        let k = rhs.ncols();
        let results: Vec<Result<(Vec<f64>, f64)>> = (0..n)
            .into_par_iter()
            .map_init(
                || Scratch {
                    g: Vec::new(),
                    rhs: Vec::new(),
                    d: Vec::new(),
                },
                |scratch, i| {
                    let u0 = self.u[i];
                    self.accumulate(u0, Some(&rhs), scratch, k);
                    // extra column: the design row of point i itself, for S_ii
                    let xrow = self.x.row(i);
                    let mut sol = vec![0.0; m * (k + 1)];
                    for a in 0..m {
                        for col in 0..k {
                            sol[a * (k + 1) + col] = scratch.rhs[a * k + col];
                        }
                    }
                    for a in 0..q {
                        sol[a * (k + 1) + k] = xrow[a];
                        // slope block of the self design row is zero: t = 0
                    }
                    if !lu_solve_in_place(&mut scratch.g, m, &mut sol, k + 1) {
                        return Err(Error::SingularDesign {
                            location: format!("local design at u={u0} (row {i})"),
                            condition: f64::INFINITY,
                        });
                    }
                    // fitted value at U_i: intercept block dotted with X_i
                    let mut fitted = vec![0.0; k];
                    let mut self_weight_dir = 0.0;
                    for a in 0..q {
                        for col in 0..k {
                            fitted[col] += xrow[a] * sol[a * (k + 1) + col];
                        }
                        self_weight_dir += xrow[a] * sol[a * (k + 1) + k];
                    }
                    let w0 = self.kernel.density(0.0) / self.h;
                    Ok((fitted, w0 * self_weight_dir))
                },
            )
            .collect();
        let mut out = Array2::zeros((n, k));
        let mut diag = Array1::zeros(n);
        for (i, r) in results.into_iter().enumerate() {
            let (fitted, d) = r?;
            for col in 0..k {
                out[[i, col]] = fitted[col];
            }
            diag[i] = d;
        }
        Ok((out, diag))
    }

    /// Apply `S` to a single vector.
    pub fn apply_vec(&self, rhs: ArrayView1<f64>) -> Result<Array1<f64>> {
        let col = rhs.insert_axis(ndarray::Axis(1));
        let (out, _) = self.apply_with_diag(col)?;
        Ok(out.column(0).to_owned())
    }
}

/// Row `i` of the smoother matrix (spec surface).
pub fn smoother_row<'a>(
    i: usize,
    x: ArrayView2<'a, f64>,
    u: ArrayView1<'a, f64>,
    h: f64,
    kernel: KernelSpec,
) -> Result<Array1<f64>> {
    Smoother::new(x, u, h, kernel)?.row(i)
}

/// The full smoother matrix (spec surface).
pub fn build_smoother<'a>(
    x: ArrayView2<'a, f64>,
    u: ArrayView1<'a, f64>,
    h: f64,
    kernel: KernelSpec,
) -> Result<Array2<f64>> {
    Smoother::new(x, u, h, kernel)?.matrix()
}
