use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("bad magic number in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated file {path}: needed {needed} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        found: usize,
    },

    #[error("trailing data in {path}: {extra} unexpected bytes")]
    TrailingBytes { path: PathBuf, extra: usize },

    #[error("invalid quantization spec: {0}")]
    Quant(String),

    #[error("invalid word layout: {0}")]
    Layout(String),

    #[error("invalid fault model: {0}")]
    Fault(String),

    #[error("invalid campaign: {0}")]
    Campaign(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape_mismatch",
            Error::Model(_) => "invalid_model",
            Error::Dataset(_) => "invalid_dataset",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::TrailingBytes { .. } => "trailing_bytes",
            Error::Quant(_) => "invalid_quant_spec",
            Error::Layout(_) => "invalid_layout",
            Error::Fault(_) => "invalid_fault_model",
            Error::Campaign(_) => "invalid_campaign",
            Error::Invalid(_) => "invalid_argument",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Csv { .. } => "csv",
        }
    }
}
