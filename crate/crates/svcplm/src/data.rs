//! Observed data for the varying-coefficient partially linear model.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// One observed sample. `Y` is the response, `eta` the surrogate block
/// for the unobserved covariates, `V` the ancillary variable driving the
/// calibration, `W` the exactly observed linear covariates, `X` the
/// covariates with varying coefficients and `U` the index variable.
/// `xi` optionally carries the true unobserved covariates (simulation or
/// validation data); it enables the benchmark mode.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Array1<f64>,
    pub eta: Array2<f64>,
    pub v: Array1<f64>,
    pub w: Array2<f64>,
    pub x: Array2<f64>,
    pub u: Array1<f64>,
    pub xi: Option<Array2<f64>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Surrogate block width `p1`.
    pub fn p1(&self) -> usize {
        self.eta.ncols()
    }

    /// Observed linear block width `p2`.
    pub fn p2(&self) -> usize {
        self.w.ncols()
    }

    /// Total linear dimension `p = p1 + p2`.
    pub fn p(&self) -> usize {
        self.p1() + self.p2()
    }

    /// Varying-coefficient dimension `q`.
    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Validation("dataset is empty".into()));
        }
        let blocks: [(&str, usize); 5] = [
            ("eta", self.eta.nrows()),
            ("V", self.v.len()),
            ("W", self.w.nrows()),
            ("X", self.x.nrows()),
            ("U", self.u.len()),
        ];
        for (name, rows) in blocks {
            if rows != n {
                return Err(Error::Validation(format!(
                    "block {name} has {rows} rows but Y has {n}"
                )));
            }
        }
        if let Some(xi) = &self.xi {
            if xi.nrows() != n {
                return Err(Error::Validation(format!(
                    "block xi has {} rows but Y has {n}",
                    xi.nrows()
                )));
            }
            if xi.ncols() != self.p1() {
                return Err(Error::Validation(format!(
                    "block xi has {} columns but eta has {}",
                    xi.ncols(),
                    self.p1()
                )));
            }
        }
        if self.p() == 0 {
            return Err(Error::Validation(
                "model needs at least one linear covariate (p1 + p2 >= 1)".into(),
            ));
        }
        if self.q() == 0 {
            return Err(Error::Validation(
                "model needs at least one varying-coefficient covariate (q >= 1)".into(),
            ));
        }
        let finite_1 = |name: &str, a: &Array1<f64>| -> Result<()> {
            for (i, &x) in a.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::Validation(format!(
                        "non-finite value in {name} at row {i}: {x}"
                    )));
                }
            }
            Ok(())
        };
        let finite_2 = |name: &str, a: &Array2<f64>| -> Result<()> {
            for ((i, j), &x) in a.indexed_iter() {
                if !x.is_finite() {
                    return Err(Error::Validation(format!(
                        "non-finite value in {name} at row {i}, column {j}: {x}"
                    )));
                }
            }
            Ok(())
        };
        finite_1("Y", &self.y)?;
        finite_2("eta", &self.eta)?;
        finite_1("V", &self.v)?;
        finite_2("W", &self.w)?;
        finite_2("X", &self.x)?;
        finite_1("U", &self.u)?;
        if let Some(xi) = &self.xi {
            finite_2("xi", xi)?;
        }
        Ok(())
    }
}
