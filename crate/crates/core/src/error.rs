use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}

impl ErrorCategory {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Numeric => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("matrix is not symmetric: asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("state Gram matrix is rank deficient (pivot {pivot}); use ridge regression with lambda > 0")]
    RankDeficient { pivot: usize },

    #[error("{what} did not converge after {iterations} iterations")]
    Convergence { what: &'static str, iterations: usize },

    #[error("cannot rescale a matrix whose spectral radius is zero")]
    ZeroSpectralRadius,

    #[error("sequence of length {len} leaves no samples after a washout of {washout}")]
    EmptyTrajectory { len: usize, washout: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("every sample was excluded from the metric (|actual| < {epsilon:e})")]
    DegenerateMetric { epsilon: f64 },

    #[error("odd number of bits ({0}); QPSK consumes bit pairs")]
    OddBitCount(usize),

    #[error("dataset contains no sequences")]
    EmptyDataset,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("integrity error: expected {expected} bytes, found {actual}")]
    Integrity { expected: u64, actual: u64 },

    #[error("checksum mismatch: header records {expected}, payload hashes to {actual}")]
    Checksum { expected: String, actual: String },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl Into<String>, right: impl Into<String>) -> Self {
        Error::Shape {
            op,
            left: left.into(),
            right: right.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) => ErrorCategory::Config,
            Error::Format(_)
            | Error::Integrity { .. }
            | Error::Checksum { .. }
            | Error::Version { .. }
            | Error::Io(_) => ErrorCategory::Data,
            Error::EmptyDataset => ErrorCategory::Data,
            _ => ErrorCategory::Numeric,
        }
    }
}
