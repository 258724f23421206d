use thiserror::Error;

pub type Result<T, E = ClupError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ClupError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("radius {radius} is infeasible: smallest achievable residual is {min_residual}")]
    Infeasible { radius: f64, min_residual: f64 },

    #[error("inner step did not converge within {events} path events (KKT residual {kkt_residual:e})")]
    InnerNonConvergence {
        events: usize,
        kkt_residual: f64,
        best: Vec<f64>,
    },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<ClupError>,
    },

    #[error("non-finite iterate: {0}")]
    NonFinite(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no stationary minimum of the ML objective found for alpha={alpha}, sigma={sigma}")]
    NoStationaryMinimum { alpha: f64, sigma: f64 },

    #[error("global minimizer stays on the same branch over [{lo_db}, {hi_db}] dB")]
    NoBranchChange { lo_db: f64, hi_db: f64 },

    #[error("no bundled schedule for alpha={alpha}, snr={snr_db} dB, variant {variant}; supported: {supported}")]
    UnsupportedSchedule {
        alpha: f64,
        snr_db: f64,
        variant: String,
        supported: String,
    },

    #[error("{context}: {source}")]
    Trial {
        context: String,
        #[source]
        source: Box<ClupError>,
    },

    #[error("dataset {path}: {reason}")]
    Dataset { path: String, reason: String },

    #[error("{path}: {reason}")]
    Schema { path: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ClupError {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        ClupError::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input rather than a numerical failure.
    pub fn is_config_error(&self) -> bool {
        match self {
            ClupError::InvalidConfig(_)
            | ClupError::LengthMismatch { .. }
            | ClupError::UnsupportedSchedule { .. }
            | ClupError::Schema { .. }
            | ClupError::Io { .. }
            | ClupError::Dataset { .. }
            | ClupError::Domain(_) => true,
            ClupError::AtIteration { source, .. } | ClupError::Trial { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}
