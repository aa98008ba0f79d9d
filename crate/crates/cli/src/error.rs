use serde::Serialize;
use thiserror::Error;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Core(#[from] qnnguard::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl ToString) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.to_string(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: &'a str,
            message: String,
            #[serde(skip_serializing_if = "Option::is_none")]
            field: Option<&'a str>,
            exit_code: i32,
        }
        let (kind, field) = match self {
            CliError::Config { field, .. } => ("invalid_config", Some(field.as_str())),
            CliError::Core(e) => (e.kind(), None),
            CliError::Io { .. } => ("io", None),
            CliError::Other(_) => ("error", None),
        };
        serde_json::to_string(&Report {
            error: kind,
            message: self.to_string(),
            field,
            exit_code: self.exit_code(),
        })
        .expect("error report serializes")
    }
}

pub type CliResult<T> = Result<T, CliError>;
