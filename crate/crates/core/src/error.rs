use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the calibration engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("index ({row}, {col}) out of bounds for {n_rows}x{n_cols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("gram matrix is singular even with ridge {ridge:e}")]
    SingularGram { ridge: f64 },

    #[error(
        "infeasible box-constrained system: row {row} needs {target} but the box only reaches [{lo}, {hi}]"
    )]
    Infeasible {
        row: usize,
        target: f64,
        lo: f64,
        hi: f64,
    },

    #[error("active-set iteration limit reached after {0} changes")]
    CyclingGuard(usize),

    #[error("matrix too large for dense rank estimation ({n_rows}x{n_cols}, limit {limit})")]
    RankTooLarge {
        n_rows: usize,
        n_cols: usize,
        limit: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
