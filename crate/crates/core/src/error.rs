use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid depth {0} (must be positive and finite)")]
    InvalidDepth(f64),

    #[error("forecast window is empty")]
    EmptyWindow,

    #[error("numerical failure{}: {message}", frame.map(|f| format!(" at frame {f}")).unwrap_or_default())]
    Numerical { frame: Option<usize>, message: String },

    #[error("malformed replay data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical { frame: None, message: message.into() }
    }

    /// Attaches the simulation frame index to a numerical failure.
    pub fn at_frame(self, idx: usize) -> Self {
        match self {
            Error::Numerical { message, .. } => Error::Numerical { frame: Some(idx), message },
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical { .. } => 2,
            Error::Config(_) => 3,
            _ => 1,
        }
    }
}
