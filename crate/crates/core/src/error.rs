use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter violated its precondition, e.g. `N >= 1`.
    #[error("invalid parameter {name}: {requirement}")]
    InvalidParameter {
        name: &'static str,
        requirement: String,
    },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("program references undeclared variable {0}")]
    UndeclaredVariable(String),

    #[error("CSV schema mismatch in {path}: {detail}")]
    Schema { path: PathBuf, detail: String },

    #[error("record sets do not match: {0}")]
    Mismatch(String),

    #[error("benchmark harness failed: {0}")]
    Harness(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, requirement: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        requirement: requirement.into(),
    }
}
