//! Command-line front end.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure,
//! 4 simulation instability.

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array1, Array2};
use std::fs;
use std::path::{Path, PathBuf};

use crate::bandwidth::{cv_profile, log_spaced};
use crate::calibrate::{calibrate_all, Bandwidth, CalibrationConfig};
use crate::error::Error;
use crate::fit::{fit_pipeline, FitConfig, FitMode, HSelect};
use crate::inference::{BootstrapConfig, GlrNull, LinearHypothesis, TestRequest};
use crate::io::{alpha_curve_csv, read_dataset_csv, FitReport, TestReport};
use crate::kernel::KernelSpec;
use crate::simulate::{preset, report_csv, StudyPlan};

#[derive(Parser, Debug)]
#[command(
    name = "svcplm",
    about = "Profile least-squares estimation and inference for varying-coefficient \
             partially linear models with calibrated error-prone covariates",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Proposed,
    Naive,
    Benchmark,
}

impl From<ModeArg> for FitMode {
    fn from(m: ModeArg) -> FitMode {
        match m {
            ModeArg::Proposed => FitMode::Proposed,
            ModeArg::Naive => FitMode::Naive,
            ModeArg::Benchmark => FitMode::Benchmark,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KernelArg {
    Gaussian,
    Epanechnikov,
    Uniform,
}

impl From<KernelArg> for KernelSpec {
    fn from(k: KernelArg) -> KernelSpec {
        match k {
            KernelArg::Gaussian => KernelSpec::Gaussian,
            KernelArg::Epanechnikov => KernelSpec::Epanechnikov,
            KernelArg::Uniform => KernelSpec::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TestArg {
    Ratio,
    Wald,
    Glr,
}

#[derive(Args, Debug)]
pub struct FitFlags {
    /// Input dataset CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "proposed")]
    pub mode: ModeArg,
    /// Coefficient bandwidth; omitted means cross-validated.
    #[arg(long)]
    pub h: Option<f64>,
    /// Calibration bandwidth; omitted means the rule of thumb.
    #[arg(long)]
    pub b: Option<f64>,
    /// Calibration polynomial order.
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub kernel: KernelArg,
    /// Candidate grid for cross-validation as lo,hi,points.
    #[arg(long, value_name = "LO,HI,N")]
    pub cv_grid: Option<String>,
    /// Worker thread cap.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl FitFlags {
    fn fit_config(&self) -> Result<FitConfig, Error> {
        Ok(FitConfig {
            h: match self.h {
                Some(h) => HSelect::Fixed(h),
                None => HSelect::CrossValidated,
            },
            kernel: self.kernel.into(),
            calibration: CalibrationConfig {
                order: self.order,
                bandwidth: match self.b {
                    Some(b) => Bandwidth::Fixed(b),
                    None => Bandwidth::RuleOfThumb,
                },
                kernel: self.kernel.into(),
            },
            mode: self.mode.into(),
            alpha_grid: None,
            cv_grid_points: 20,
        })
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the model on a CSV dataset; writes fit.json and alpha_curve.csv.
    Fit(FitFlags),
    /// Score a bandwidth grid by leave-one-out cross-validation; writes cv.json.
    Cv {
        #[command(flatten)]
        flags: FitFlags,
    },
    /// Run a hypothesis test; writes test.json.
    Test {
        #[command(flatten)]
        flags: FitFlags,
        #[arg(long, value_enum)]
        test: TestArg,
        /// Hypothesis rows, semicolon separated: "1,1,1;0,1,0".
        #[arg(long, value_name = "ROWS", allow_hyphen_values = true)]
        a: Option<String>,
        /// Hypothesis target vector, comma separated (defaults to zero).
        #[arg(long, allow_hyphen_values = true)]
        target: Option<String>,
        /// Constant coefficient indices (1-based) for the GLR test.
        #[arg(long)]
        constant: Option<String>,
        /// Bootstrap replicates; enables wild-bootstrap calibration.
        #[arg(long, value_name = "B")]
        bootstrap: Option<usize>,
        #[arg(long, default_value_t = 0.05)]
        level: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a Monte Carlo study preset or a JSON study plan; writes
    /// report.csv and provenance.json.
    Simulate {
        /// Preset name: scenario_i..scenario_iv, table5, table5_desk,
        /// table6, table6_desk.
        #[arg(long)]
        preset: Option<String>,
        /// A JSON study plan (alternative to --preset).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Calibrate the surrogate block only; writes calibration.csv.
    Calibrate {
        #[command(flatten)]
        flags: FitFlags,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Validation(_)
        | Error::InvalidHypothesis(_)
        | Error::InvalidBandwidth(_)
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_) => 2,
        Error::SimulationInstability { .. } => 4,
        _ => 3,
    }
}

fn parse_matrix(rows: &str) -> Result<Array2<f64>, Error> {
    let mut parsed: Vec<Vec<f64>> = Vec::new();
    for row in rows.split(';') {
        let entries: Vec<f64> = row
            .split([',', ' '])
            .filter(|t| !t.trim().is_empty())
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidHypothesis(format!("cannot parse entry {t:?}")))
            })
            .collect::<Result<_, _>>()?;
        if entries.is_empty() {
            continue;
        }
        if let Some(first) = parsed.first() {
            if entries.len() != first.len() {
                return Err(Error::InvalidHypothesis(
                    "hypothesis rows have unequal widths".into(),
                ));
            }
        }
        parsed.push(entries);
    }
    if parsed.is_empty() {
        return Err(Error::InvalidHypothesis("empty hypothesis matrix".into()));
    }
    let l = parsed.len();
    let p = parsed[0].len();
    Ok(Array2::from_shape_fn((l, p), |(r, c)| parsed[r][c]))
}

fn parse_vector(text: &str) -> Result<Array1<f64>, Error> {
    let entries: Vec<f64> = text
        .split([',', ' '])
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidHypothesis(format!("cannot parse entry {t:?}")))
        })
        .collect::<Result<_, _>>()?;
    Ok(Array1::from(entries))
}

fn with_threads<T>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

fn write_out(dir: &Path, name: &str, content: &str) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), content)?;
    Ok(())
}

fn cmd_fit(flags: &FitFlags) -> Result<(), Error> {
    let ds = read_dataset_csv(&flags.input)?;
    let cfg = flags.fit_config()?;
    let fit = with_threads(flags.threads, || fit_pipeline(&ds, &cfg))?;
    let report = FitReport::from_fit(&fit);
    write_out(&flags.out, "fit.json", &serde_json::to_string_pretty(&report)?)?;
    write_out(&flags.out, "alpha_curve.csv", &alpha_curve_csv(&fit))?;
    println!("mode: {}", fit.mode);
    println!("h: {}  b: {}", fit.h, fit.b.map_or("-".into(), |b| b.to_string()));
    for k in 0..fit.theta_hat.len() {
        println!(
            "theta[{}] = {:.6} (se {:.6})",
            k + 1,
            fit.theta_hat[k],
            fit.se_theta[k]
        );
    }
    println!("sigma2_hat = {:.6}", fit.sigma2_hat);
    Ok(())
}

fn cmd_cv(flags: &FitFlags) -> Result<(), Error> {
    let ds = read_dataset_csv(&flags.input)?;
    let mut cfg = flags.fit_config()?;
    cfg.h = HSelect::Fixed(1.0); // not used by the scorer
    let grid = match &flags.cv_grid {
        Some(text) => {
            let parts: Vec<&str> = text.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Validation(
                    "--cv-grid expects lo,hi,points".into(),
                ));
            }
            let lo: f64 = parts[0].trim().parse().map_err(|_| {
                Error::Validation(format!("cannot parse grid bound {:?}", parts[0]))
            })?;
            let hi: f64 = parts[1].trim().parse().map_err(|_| {
                Error::Validation(format!("cannot parse grid bound {:?}", parts[1]))
            })?;
            let points: usize = parts[2].trim().parse().map_err(|_| {
                Error::Validation(format!("cannot parse grid size {:?}", parts[2]))
            })?;
            if !(lo > 0.0 && hi >= lo && points >= 1) {
                return Err(Error::Validation("bad --cv-grid range".into()));
            }
            log_spaced(lo, hi, points)
        }
        None => crate::bandwidth::default_cv_grid(ds.u.view(), 20),
    };
    let profile = with_threads(flags.threads, || cv_profile(&grid, &ds, &cfg))?;
    let best = profile
        .iter()
        .fold(None::<(f64, f64)>, |acc, &(h, s)| match acc {
            Some((_, sb)) if sb <= s => acc,
            _ => Some((h, s)),
        })
        .ok_or_else(|| Error::BandwidthSelection("empty grid".into()))?;
    #[derive(serde::Serialize)]
    struct CvReport {
        selected_h: f64,
        grid: Vec<CvPoint>,
    }
    #[derive(serde::Serialize)]
    struct CvPoint {
        h: f64,
        score: f64,
    }
    let report = CvReport {
        selected_h: best.0,
        grid: profile
            .iter()
            .map(|&(h, score)| CvPoint { h, score })
            .collect(),
    };
    write_out(&flags.out, "cv.json", &serde_json::to_string_pretty(&report)?)?;
    println!("selected h = {}", best.0);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_test(
    flags: &FitFlags,
    test: TestArg,
    a: Option<&str>,
    target: Option<&str>,
    constant: Option<&str>,
    bootstrap: Option<usize>,
    level: f64,
    seed: Option<u64>,
) -> Result<(), Error> {
    let ds = read_dataset_csv(&flags.input)?;
    let cfg = flags.fit_config()?;
    let request = match test {
        TestArg::Ratio | TestArg::Wald => {
            let a_text = a.ok_or_else(|| {
                Error::InvalidHypothesis("parametric tests need --a rows".into())
            })?;
            let a_mat = parse_matrix(a_text)?;
            let target = match target {
                Some(t) => parse_vector(t)?,
                None => Array1::zeros(a_mat.nrows()),
            };
            if target.len() != a_mat.nrows() {
                return Err(Error::InvalidHypothesis(format!(
                    "target has {} entries but A has {} rows",
                    target.len(),
                    a_mat.nrows()
                )));
            }
            let hyp = LinearHypothesis { a: a_mat, target };
            match test {
                TestArg::Ratio => TestRequest::Ratio(hyp),
                _ => TestRequest::Wald(hyp),
            }
        }
        TestArg::Glr => {
            let constant = match constant {
                Some(text) => {
                    let idx: Vec<usize> = text
                        .split([',', ' '])
                        .filter(|t| !t.trim().is_empty())
                        .map(|t| {
                            t.trim().parse::<usize>().map_err(|_| {
                                Error::InvalidHypothesis(format!("bad index {t:?}"))
                            })
                        })
                        .collect::<Result<_, _>>()?;
                    let zero_based: Vec<usize> = idx
                        .into_iter()
                        .map(|k| {
                            k.checked_sub(1).ok_or_else(|| {
                                Error::InvalidHypothesis("indices are 1-based".into())
                            })
                        })
                        .collect::<Result<_, _>>()?;
                    GlrNull {
                        constant: zero_based,
                    }
                }
                None => GlrNull::all(ds.q()),
            };
            TestRequest::Glr(constant, None)
        }
    };
    let boot = bootstrap.map(|b| BootstrapConfig {
        replicates: b,
        alpha_level: level,
        seed: seed.unwrap_or_else(rand::random),
    });
    let result =
        with_threads(flags.threads, || crate::inference::run_test(&ds, &cfg, &request, boot.as_ref()))?;
    let report = TestReport::from_result(&result);
    write_out(&flags.out, "test.json", &serde_json::to_string_pretty(&report)?)?;
    println!("test: {}", report.test);
    println!("statistic = {:.6}", report.statistic);
    println!("scaled statistic = {:.6}", report.scaled_statistic);
    if let Some(p) = report.p_asymptotic {
        println!("p (asymptotic) = {p:.4}");
    }
    if let Some(p) = report.p_bootstrap {
        println!("p (bootstrap) = {p:.4}");
    }
    Ok(())
}

fn cmd_simulate(
    preset_name: Option<&str>,
    input: Option<&Path>,
    out: &Path,
    replicates: Option<usize>,
    n: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> Result<(), Error> {
    let mut plan = match (preset_name, input) {
        (Some(name), None) => preset(name, seed.unwrap_or_else(rand::random))
            .ok_or_else(|| Error::Validation(format!("unknown preset {name:?}")))?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<StudyPlan>(&text)?
        }
        _ => {
            return Err(Error::Validation(
                "simulate needs exactly one of --preset or --input".into(),
            ))
        }
    };
    if let Some(r) = replicates {
        plan.spec_mut().replicates = r;
    }
    if let Some(n) = n {
        plan.spec_mut().n = n;
    }
    if let Some(s) = seed {
        plan.spec_mut().seed = s;
        if let StudyPlan::Power { bootstrap, .. } = &mut plan {
            bootstrap.seed = s;
        }
    }
    let report = with_threads(threads, || plan.run())?;
    #[derive(serde::Serialize)]
    struct Provenance<'a> {
        seed: u64,
        version: &'static str,
        plan: &'a StudyPlan,
        replicates: usize,
        failures: usize,
        notes: &'a [String],
    }
    let provenance = Provenance {
        seed: plan.spec().seed,
        version: env!("CARGO_PKG_VERSION"),
        plan: &plan,
        replicates: report.replicates,
        failures: report.failures,
        notes: &report.notes,
    };
    write_out(out, "report.csv", &report_csv(&report))?;
    write_out(
        out,
        "provenance.json",
        &serde_json::to_string_pretty(&provenance)?,
    )?;
    println!(
        "wrote {} rows to {}",
        report.est_rows.len() + report.power_rows.len(),
        out.join("report.csv").display()
    );
    Ok(())
}

fn cmd_calibrate(flags: &FitFlags) -> Result<(), Error> {
    let ds = read_dataset_csv(&flags.input)?;
    let cfg = flags.fit_config()?;
    let cal = with_threads(flags.threads, || {
        calibrate_all(ds.eta.view(), ds.v.view(), &cfg.calibration)
    })?;
    let p1 = ds.p1();
    let mut out = String::from("V");
    for k in 1..=p1 {
        out.push_str(&format!(",xi_hat_{k}"));
    }
    for k in 1..=p1 {
        out.push_str(&format!(",e_hat_{k}"));
    }
    out.push('\n');
    for i in 0..ds.n() {
        out.push_str(&ds.v[i].to_string());
        for k in 0..p1 {
            out.push_str(&format!(",{}", cal.xi_hat[[i, k]]));
        }
        for k in 0..p1 {
            out.push_str(&format!(",{}", cal.e_hat[[i, k]]));
        }
        out.push('\n');
    }
    write_out(&flags.out, "calibration.csv", &out)?;
    println!("calibration bandwidth b = {}", cal.bandwidth);
    Ok(())
}

/// Run a parsed command, returning the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Fit(flags) => cmd_fit(flags),
        Command::Cv { flags } => cmd_cv(flags),
        Command::Test {
            flags,
            test,
            a,
            target,
            constant,
            bootstrap,
            level,
            seed,
        } => cmd_test(
            flags,
            *test,
            a.as_deref(),
            target.as_deref(),
            constant.as_deref(),
            *bootstrap,
            *level,
            *seed,
        ),
        Command::Simulate {
            preset,
            input,
            out,
            replicates,
            n,
            seed,
            threads,
        } => cmd_simulate(
            preset.as_deref(),
            input.as_deref(),
            out,
            *replicates,
            *n,
            *seed,
            *threads,
        ),
        Command::Calibrate { flags } => cmd_calibrate(flags),
    };
    match outcome {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source: Option<&Error> = match &err {
                Error::Stage { source, .. } => Some(source),
                _ => None,
            };
            while let Some(e) = source {
                eprintln!("  caused by: {e}");
                source = match e {
                    Error::Stage { source, .. } => Some(source),
                    _ => None,
                };
            }
            exit_code(&err)
        }
    }
}
