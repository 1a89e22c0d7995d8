use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {message}", file.display())]
    Ingest {
        file: PathBuf,
        line: u64,
        message: String,
    },

    #[error("universe error: {0}")]
    Universe(String),

    #[error("insufficient history: indicators need at least {required} rows, got {available}")]
    Warmup { required: usize, available: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("Frank-Wolfe did not converge after {iterations} iterations (gap {gap:e})")]
    NonConvergence { iterations: usize, gap: f64 },

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("estimation window too short: need {required} observations, got {available}")]
    WindowTooShort { required: usize, available: usize },

    #[error("degenerate portfolio variance")]
    DegenerateVariance,

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("accounting error on {date}: {message}")]
    Accounting { date: NaiveDate, message: String },

    #[error("window {date}: {source}")]
    Window {
        date: NaiveDate,
        #[source]
        source: Box<Error>,
    },

    #[error("span {0}")]
    Span(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
