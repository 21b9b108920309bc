use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PruneError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("numerical failure at iteration {iteration}: {context}")]
    Numerical { iteration: usize, context: String },

    #[error("lasso oracle did not converge after {sweeps} sweeps (last change {last_change:e})")]
    OracleFailure { sweeps: usize, last_change: f64 },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("node `{node}`: {source}")]
    Node {
        node: String,
        #[source]
        source: Box<PruneError>,
    },

    #[error("format error in {path} at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PruneError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PruneError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_node(self, node: &str) -> Self {
        PruneError::Node {
            node: node.to_string(),
            source: Box::new(self),
        }
    }
}
