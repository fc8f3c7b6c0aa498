use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("infeasible signature {dims:?}: {reason}")]
    InfeasibleSignature { dims: Vec<usize>, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("point is not a certified minimizer: loss {loss:e} exceeds tolerance {tolerance:e}")]
    NotMinimizer { loss: f64, tolerance: f64 },

    #[error("eigen-solver did not converge after {iterations} iterations (best estimate {estimate}, residual {residual:e})")]
    Convergence {
        estimate: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("dense path needs {entries} entries, above the cap of {cap}; use the matrix-free path")]
    SizeCap { entries: usize, cap: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("trajectory has no parameter snapshots")]
    MissingSnapshots,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InfeasibleSignature { .. } => "infeasible_signature",
            Error::Shape(_) => "shape_mismatch",
            Error::NotMinimizer { .. } => "not_minimizer",
            Error::Convergence { .. } => "convergence",
            Error::SizeCap { .. } => "size_cap",
            Error::Domain(_) => "domain",
            Error::Config(_) => "invalid_config",
            Error::MissingSnapshots => "missing_snapshots",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code: 2 validation, 3 certification, 4 convergence, 5 size cap.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InfeasibleSignature { .. }
            | Error::Shape(_)
            | Error::Domain(_)
            | Error::Config(_)
            | Error::MissingSnapshots
            | Error::Json(_) => 2,
            Error::NotMinimizer { .. } => 3,
            Error::Convergence { .. } => 4,
            Error::SizeCap { .. } => 5,
            Error::Io(_) => 1,
        }
    }
}
