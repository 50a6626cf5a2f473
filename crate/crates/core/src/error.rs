use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the reconstruction pipeline.
///
/// Variants are grouped so that the CLI can map them onto exit codes:
/// input/format problems versus numeric or constraint failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("unsupported camera model `{0}`")]
    UnsupportedModel(String),

    #[error("dangling reference: {0}")]
    Reference(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("chunk not aligned to the voxel lattice: {0}")]
    Alignment(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("surface sampling failed: {0}")]
    Sampling(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed or missing inputs, as opposed to
    /// numeric or constraint failures during processing.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Format(_)
                | Error::Corruption(_)
                | Error::UnsupportedModel(_)
                | Error::Reference(_)
                | Error::Input(_)
                | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
