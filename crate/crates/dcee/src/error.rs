//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced while loading data, building designs, or fitting.
///
/// The split between "the input is wrong" (`Csv`, `Data`, `Spec`,
/// `Validation`) and "the arithmetic broke down" (`Singular`, `Numerical`,
/// `EmptyArm`) is deliberate: callers such as the CLI map the former to a
/// different exit code than the latter.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    /// A malformed record in a CSV input. `line` is the 1-based line number
    /// in the file (the header is line 1).
    #[error("CSV parse error at line {line}: {message}")]
    Csv { line: u64, message: String },

    /// Structural problems in a dataset: inconsistent horizons, duplicate
    /// decision points, an outcome that varies within a person, and so on.
    #[error("invalid dataset: {0}")]
    Data(String),

    /// The dataset failed semantic validation (positivity, eligibility
    /// consistency, missing values). The message summarises the report.
    #[error("dataset validation failed: {0}")]
    Validation(String),

    /// An estimand, learner, or run configuration is inconsistent.
    #[error("invalid specification: {0}")]
    Spec(String),

    /// A matrix that must be inverted is numerically rank deficient.
    #[error(
        "{what} is numerically singular \
         (reciprocal condition number {rcond:.3e} < {min:.1e})"
    )]
    Singular { what: String, rcond: f64, min: f64 },

    /// Non-finite intermediate values, failed root checks, and other
    /// numerical breakdowns that are not simple rank deficiency.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An outcome-model fit was requested on a subset where one treatment
    /// arm has too few usable rows.
    #[error(
        "cannot fit outcome model: arm {arm} has {found} eligible row(s) \
         in the fitting subset, need at least {need}"
    )]
    EmptyArm { arm: u8, found: usize, need: usize },
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line());
        let message = e.to_string();
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => Error::Csv { line, message },
        }
    }
}

impl Error {
    /// True for errors that describe bad input rather than a numerical
    /// breakdown during fitting.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::Singular { .. } | Error::Numerical(_) | Error::EmptyArm { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
