use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("layer `{layer}` has non-positive extent: {detail}")]
    Extent { layer: String, detail: String },

    #[error("backward called on an empty tape (no forward pass recorded)")]
    EmptyTape,

    #[error("{location}: {message}")]
    Data { location: String, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }

    pub(crate) fn data(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Data { location: location.into(), message: message.into() }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config { .. } | Error::Extent { .. } => 1,
            Error::Data { .. } | Error::Checkpoint(_) | Error::Io(_) | Error::Json(_) => 2,
            Error::Shape { .. } | Error::EmptyTape | Error::Invariant(_) => 3,
        }
    }
}
