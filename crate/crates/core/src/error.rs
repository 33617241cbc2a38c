use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("oracle unusable: {0}")]
    OracleUnusable(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error at {}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error("refusing to write into non-empty directory {} (use --force)", .0.display())]
    Refused(PathBuf),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable tag used in machine-parseable CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::OracleUnusable(_) => "oracle",
            Error::NonFinite(_) => "non_finite",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Refused(_) => "refused",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
