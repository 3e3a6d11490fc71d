use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("record `{record}` ({path}): {message}")]
    Record {
        record: String,
        path: PathBuf,
        message: String,
    },

    #[error("{path}: malformed csv: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("signal error: {0}")]
    Signal(String),

    #[error("design matrix is rank deficient for the requested terms ({rank} of {terms})")]
    RankDeficient { rank: usize, terms: usize },

    #[error("F-critical value outside embedded table: df1={df1}, df2={df2}, alpha={alpha}")]
    OutOfTable { df1: usize, df2: usize, alpha: f64 },

    #[error("no indicators survive selection; refine the candidate feature set (return to extraction)")]
    NoIndicators,

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
