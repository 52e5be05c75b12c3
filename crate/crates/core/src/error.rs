use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension {dim} exceeds the full-Hessian budget of {budget}")]
    Capacity { dim: usize, budget: usize },

    #[error("hessian variant mismatch: cannot combine {left} with {right}")]
    VariantMismatch {
        left: &'static str,
        right: &'static str,
    },

    #[error("no trajectory pair passed the curvature filter")]
    EmptyMemory,

    #[error("numerical error at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("model store version {found} is incompatible with supported version {expected}")]
    StoreVersion { found: u32, expected: u32 },

    #[error("model store integrity error in {path}: {message}")]
    Integrity { path: PathBuf, message: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, found: usize) -> Self {
        Error::Shape {
            context,
            expected,
            found,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical { .. } | Error::Domain(_) => 3,
            Error::StoreVersion { .. } | Error::Integrity { .. } => 4,
            _ => 2,
        }
    }
}
