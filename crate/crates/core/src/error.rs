use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed CSV{}: {message}", location(.path, .line))]
    MalformedCsv {
        path: Option<PathBuf>,
        line: Option<u64>,
        message: String,
    },

    #[error("covariance for `{label}` is not positive definite")]
    NonPositiveDefiniteCovariance { label: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{n} items exceeds the subset limit of {max}")]
    SubsetLimitExceeded { n: usize, max: usize },

    #[error(
        "proposal tuning failed: acceptance rate {rate:.3} never entered \
         [{low:.2}, {high:.2}] (last sd {sd:.4})"
    )]
    TuningFailed {
        rate: f64,
        low: f64,
        high: f64,
        sd: f64,
    },

    #[error("mixture component {component} collapsed (responsibility mass {mass:e})")]
    DegenerateComponent { component: usize, mass: f64 },

    #[error("training data contains a single class")]
    SingleClassTraining,

    #[error("partition lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("sample is empty")]
    EmptySample,

    #[error("pooled standard deviation is zero")]
    ZeroVariance,

    #[error("`{label}` has {available} samples, need at least {required}")]
    InsufficientSamples {
        label: String,
        required: usize,
        available: usize,
    },

    #[error("model has no corner vowel `{0}`")]
    MissingCornerVowel(String),

    #[error("teaching pool for `{label}` has {available} examples, {required} required")]
    InsufficientPool {
        label: String,
        required: usize,
        available: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn location(path: &Option<PathBuf>, line: &Option<u64>) -> String {
    match (path, line) {
        (Some(p), Some(l)) => format!(" in {}:{}", p.display(), l),
        (Some(p), None) => format!(" in {}", p.display()),
        (None, Some(l)) => format!(" at line {l}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn csv(message: impl Into<String>) -> Self {
        Error::MalformedCsv {
            path: None,
            line: None,
            message: message.into(),
        }
    }

    pub(crate) fn with_path(self, path: &std::path::Path) -> Self {
        match self {
            Error::MalformedCsv { line, message, .. } => Error::MalformedCsv {
                path: Some(path.to_path_buf()),
                line,
                message,
            },
            other => other,
        }
    }

    /// True for errors caused by floating-point breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonPositiveDefiniteCovariance { .. }
                | Error::DegenerateComponent { .. }
                | Error::TuningFailed { .. }
                | Error::ZeroVariance
        )
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line());
        Error::MalformedCsv {
            path: None,
            line,
            message: err.to_string(),
        }
    }
}
