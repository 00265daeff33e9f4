//! Error type shared by every module.
//!
//! Each variant maps to a stable short code (see [`Error::code`]) so that
//! scripts driving the CLI can assert on failure modes without parsing
//! free-form messages.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input values violate a precondition (non-finite score, T <= 0, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A supervised metric was requested on a set without both classes.
    #[error("unsupported metric: {0}")]
    UnsupportedMetric(String),

    /// Correlation over a constant sequence.
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    /// Method/distance combination that cannot be evaluated.
    #[error("configuration error: {0}")]
    Config(String),

    /// Distance requires sigmas but the fit has none.
    #[error("unsupported distance: {0}")]
    UnsupportedDistance(String),

    /// Least squares with zero variance in the regressor.
    #[error("ill-conditioned regression: {0}")]
    IllConditioned(String),

    /// Every scanned threshold produced a degenerate suite.
    #[error("tau tuning failed: {0}")]
    TuningFailed(String),

    /// Test suite shares set ids with the training suite.
    #[error("train/test leakage: {0}")]
    Leakage(String),

    /// Synthetic suite request cannot be satisfied.
    #[error("generation error: {0}")]
    Generation(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("unsupported format_version {found} (expected {expected})")]
    FormatVersion { found: String, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "E_INPUT",
            Error::UnsupportedMetric(_) => "E_UNSUPPORTED_METRIC",
            Error::UndefinedCorrelation(_) => "E_UNDEFINED_CORRELATION",
            Error::Config(_) => "E_CONFIG",
            Error::UnsupportedDistance(_) => "E_UNSUPPORTED_DISTANCE",
            Error::IllConditioned(_) => "E_ILL_CONDITIONED",
            Error::TuningFailed(_) => "E_DEGENERATE",
            Error::Leakage(_) => "E_LEAKAGE",
            Error::Generation(_) => "E_GENERATION",
            Error::Parse { .. } => "E_PARSE",
            Error::FormatVersion { .. } => "E_FORMAT_VERSION",
            Error::Io { .. } => "E_IO",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
