use thiserror::Error;

/// Errors produced by estimation, inference and simulation routines.
#[derive(Error, Debug)]
pub enum Error {
    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),

    #[error("singular local design at {location}: condition estimate {condition:.3e}")]
    SingularDesign { location: String, condition: f64 },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("collinear covariates in {stage}: condition estimate {condition:.3e}")]
    CollinearCovariates { stage: &'static str, condition: f64 },

    #[error("invalid hypothesis: {0}")]
    InvalidHypothesis(String),

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("bandwidth selection failed: {0}")]
    BandwidthSelection(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("quadrature did not converge to tolerance {tol:.1e} on [{a}, {b}]")]
    NonConvergence { tol: f64, a: f64, b: f64 },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("bootstrap instability: {failed} of {total} replicates failed")]
    BootstrapInstability { failed: usize, total: usize },

    #[error("simulation instability in cell {cell}: {failed} of {total} replicates failed")]
    SimulationInstability {
        cell: String,
        failed: usize,
        total: usize,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with a pipeline stage label.
    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, unwrapping stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
