use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("missing column `{0}` in input header")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: {reason}")]
    InvalidCell {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("model file version `{found}` does not match supported version `{expected}`")]
    VersionMismatch { expected: String, found: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("singular information matrix: {0}")]
    Singular(String),

    #[error("Newton-Raphson did not converge after {iterations} iterations (max |score| = {max_score:e})")]
    NotConverged { iterations: usize, max_score: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("leakage detected: {0}")]
    Leakage(String),

    #[error("Cox fit on {side} data failed: {source}")]
    Fit {
        side: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        if let Error::Fit { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::Divergence { .. }
                | Error::Singular(_)
                | Error::NotConverged { .. }
                | Error::Numerical(_)
        )
    }
}
