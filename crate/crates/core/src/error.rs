use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate labels: need at least 2 distinct classes, found {found}")]
    DegenerateLabels { found: usize },

    #[error("degenerate class {class}: only {members} member(s), need at least 2")]
    DegenerateClass { class: usize, members: usize },

    #[error("degenerate variance: asymptotic variance is zero, cannot standardize")]
    DegenerateVariance,

    #[error("degenerate bandwidth: median pairwise distance is zero")]
    DegenerateBandwidth,

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in {path} at row {row}: {reason}")]
    Parse {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
