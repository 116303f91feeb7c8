use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric error in {context}: {detail}")]
    Numeric { context: String, detail: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("metric undefined: {0}")]
    MetricUndefined(String),
    #[error("migration degeneracy: {0}")]
    Degenerate(String),
    #[error("comparison error: {0}")]
    Comparison(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn numeric(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric { context: context.into(), detail: detail.into() }
    }

    /// Prefixes the context of a numeric error, leaving other kinds untouched.
    pub fn in_context(self, prefix: &str) -> Self {
        match self {
            Error::Numeric { context, detail } => Error::Numeric { context: format!("{prefix}/{context}"), detail },
            other => other,
        }
    }
}
