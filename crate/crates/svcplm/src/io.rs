//! CSV dataset schema and JSON report serialization.
//!
//! Dataset CSV columns (header required, order free):
//! `Y, eta_1..eta_p1, V, W_1..W_p2, X_1..X_q, U[, xi_1..xi_p1]`.
//! Widths are inferred from the numbered headers; the optional `xi`
//! block enables benchmark mode.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fit::ProfileFit;
use crate::inference::TestResult;

fn numbered_block(headers: &[String], prefix: &str) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = Vec::new();
    for (idx, h) in headers.iter().enumerate() {
        if let Some(rest) = h.strip_prefix(prefix) {
            match rest.parse::<usize>() {
                Ok(k) if k >= 1 => found.push((k, idx)),
                _ => {
                    return Err(Error::Validation(format!(
                        "column {h} does not follow the {prefix}<k> naming"
                    )))
                }
            }
        }
    }
    found.sort();
    for (pos, (k, _)) in found.iter().enumerate() {
        if *k != pos + 1 {
            return Err(Error::Validation(format!(
                "columns {prefix}1..{prefix}{} must be contiguous; missing {prefix}{}",
                found.len(),
                pos + 1
            )));
        }
    }
    Ok(found.into_iter().map(|(_, idx)| idx).collect())
}

fn single_column(headers: &[String], name: &str) -> Result<usize> {
    let hits: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.as_str() == name)
        .map(|(i, _)| i)
        .collect();
    match hits.len() {
        1 => Ok(hits[0]),
        0 => Err(Error::Validation(format!("CSV is missing the {name} column"))),
        _ => Err(Error::Validation(format!("CSV has duplicate {name} columns"))),
    }
}

/// Read a dataset from the CSV schema.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let y_idx = single_column(&headers, "Y")?;
    let v_idx = single_column(&headers, "V")?;
    let u_idx = single_column(&headers, "U")?;
    let eta_idx = numbered_block(&headers, "eta_")?;
    let w_idx = numbered_block(&headers, "W_")?;
    let x_idx = numbered_block(&headers, "X_")?;
    let xi_idx = numbered_block(&headers, "xi_")?;

    if eta_idx.is_empty() {
        return Err(Error::Validation(
            "CSV is missing the eta_1 column (surrogate block)".into(),
        ));
    }
    if x_idx.is_empty() {
        return Err(Error::Validation(
            "CSV is missing the X_1 column (varying-coefficient block)".into(),
        ));
    }
    if !xi_idx.is_empty() && xi_idx.len() != eta_idx.len() {
        return Err(Error::Validation(format!(
            "xi block has {} columns but eta has {}",
            xi_idx.len(),
            eta_idx.len()
        )));
    }
    let mut known: Vec<usize> = vec![y_idx, v_idx, u_idx];
    known.extend_from_slice(&eta_idx);
    known.extend_from_slice(&w_idx);
    known.extend_from_slice(&x_idx);
    known.extend_from_slice(&xi_idx);
    for (idx, h) in headers.iter().enumerate() {
        if !known.contains(&idx) {
            return Err(Error::Validation(format!("unrecognized CSV column {h}")));
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(headers.len());
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                Error::Validation(format!(
                    "row {}, column {}: cannot parse {field:?} as a number",
                    line + 2,
                    headers.get(col).map(String::as_str).unwrap_or("?")
                ))
            })?;
            row.push(value);
        }
        if row.len() != headers.len() {
            return Err(Error::Validation(format!(
                "row {} has {} fields, expected {}",
                line + 2,
                row.len(),
                headers.len()
            )));
        }
        rows.push(row);
    }
    let n = rows.len();
    let take1 = |idx: usize| Array1::from_shape_fn(n, |i| rows[i][idx]);
    let take2 =
        |idxs: &[usize]| Array2::from_shape_fn((n, idxs.len()), |(i, j)| rows[i][idxs[j]]);

    let ds = Dataset {
        y: take1(y_idx),
        eta: take2(&eta_idx),
        v: take1(v_idx),
        w: take2(&w_idx),
        x: take2(&x_idx),
        u: take1(u_idx),
        xi: if xi_idx.is_empty() {
            None
        } else {
            Some(take2(&xi_idx))
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Write a dataset in the CSV schema (columns in canonical order).
pub fn write_dataset_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = vec!["Y".into()];
    for k in 1..=ds.p1() {
        header.push(format!("eta_{k}"));
    }
    header.push("V".into());
    for k in 1..=ds.p2() {
        header.push(format!("W_{k}"));
    }
    for k in 1..=ds.q() {
        header.push(format!("X_{k}"));
    }
    header.push("U".into());
    if ds.xi.is_some() {
        for k in 1..=ds.p1() {
            header.push(format!("xi_{k}"));
        }
    }
    wtr.write_record(&header)?;
    for i in 0..ds.n() {
        let mut row: Vec<String> = vec![ds.y[i].to_string()];
        for k in 0..ds.p1() {
            row.push(ds.eta[[i, k]].to_string());
        }
        row.push(ds.v[i].to_string());
        for k in 0..ds.p2() {
            row.push(ds.w[[i, k]].to_string());
        }
        for k in 0..ds.q() {
            row.push(ds.x[[i, k]].to_string());
        }
        row.push(ds.u[i].to_string());
        if let Some(xi) = &ds.xi {
            for k in 0..ds.p1() {
                row.push(xi[[i, k]].to_string());
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AlphaGridPoint {
    pub u: f64,
    pub alpha: Vec<f64>,
    pub dalpha: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Bandwidths {
    pub h: f64,
    pub b: Option<f64>,
}

/// JSON document for a completed fit.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub theta_hat: Vec<f64>,
    pub se_theta: Vec<f64>,
    pub sigma2_hat: f64,
    pub alpha_grid: Vec<AlphaGridPoint>,
    #[serde(rename = "trace_S")]
    pub trace_s: f64,
    pub mode: String,
    pub bandwidths: Bandwidths,
}

impl FitReport {
    pub fn from_fit(fit: &ProfileFit) -> Self {
        let q = fit.alpha.ncols();
        let alpha_grid = (0..fit.alpha_u.len())
            .map(|g| AlphaGridPoint {
                u: fit.alpha_u[g],
                alpha: (0..q).map(|j| fit.alpha[[g, j]]).collect(),
                dalpha: (0..q).map(|j| fit.dalpha[[g, j]]).collect(),
            })
            .collect();
        FitReport {
            theta_hat: fit.theta_hat.to_vec(),
            se_theta: fit.se_theta.to_vec(),
            sigma2_hat: fit.sigma2_hat,
            alpha_grid,
            trace_s: fit.trace_s,
            mode: fit.mode.to_string(),
            bandwidths: Bandwidths { h: fit.h, b: fit.b },
        }
    }
}

/// JSON document for a test outcome.
#[derive(Debug, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    pub statistic: f64,
    pub scaled_statistic: f64,
    pub rho_n: Option<f64>,
    pub df: usize,
    pub p_asymptotic: Option<f64>,
    pub p_bootstrap: Option<f64>,
    #[serde(rename = "B")]
    pub b: Option<usize>,
    pub seed: Option<u64>,
    pub critical_value: Option<f64>,
}

impl TestReport {
    pub fn from_result(result: &TestResult) -> Self {
        TestReport {
            test: result.test.to_string(),
            statistic: result.statistic,
            scaled_statistic: result.scaled_statistic,
            rho_n: result.rho_n,
            df: result.df,
            p_asymptotic: result.p_asymptotic,
            p_bootstrap: result.p_bootstrap,
            b: result.bootstrap.as_ref().map(|b| b.replicates),
            seed: result.bootstrap.as_ref().map(|b| b.seed),
            critical_value: result.bootstrap.as_ref().map(|b| b.critical_value),
        }
    }
}

/// Plot-ready varying-coefficient curves: `u, alpha_1..alpha_q`.
pub fn alpha_curve_csv(fit: &ProfileFit) -> String {
    let q = fit.alpha.ncols();
    let mut out = String::from("u");
    for j in 1..=q {
        out.push_str(&format!(",alpha_{j}"));
    }
    out.push('\n');
    for g in 0..fit.alpha_u.len() {
        out.push_str(&fit.alpha_u[g].to_string());
        for j in 0..q {
            out.push_str(&format!(",{}", fit.alpha[[g, j]]));
        }
        out.push('\n');
    }
    out
}
