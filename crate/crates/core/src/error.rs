use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fusion requires ≥ 1 feature map")]
    EmptyFusion,

    #[error("fixed-capacity fusion expects exactly {expected} inputs, got {got}")]
    FixedCapacity { expected: usize, got: usize },

    #[error("no valid pixels")]
    NoValidPixels,

    #[error("lights coplanar (condition number {condition:.3e})")]
    LightsCoplanar { condition: f64 },

    #[error("variable does not belong to this tape")]
    ForeignVariable,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint error at byte offset {offset}: {reason}")]
    Checkpoint { offset: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("sample {sample}: {source}")]
    Sample {
        sample: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by bad input data or files rather than
    /// bad arguments or numerical breakdown.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Format { .. } | Error::Checkpoint { .. } => true,
            Error::Sample { source, .. } => source.is_data_error(),
            _ => false,
        }
    }

    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical(_) | Error::LightsCoplanar { .. } => true,
            Error::Sample { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
