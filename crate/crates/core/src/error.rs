use thiserror::Error;

/// Errors surfaced by the simulator and its configuration layer.
#[derive(Debug, Error)]
pub enum Error {
    /// A device profile or engine knob is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A scenario, trace or workload failed validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// A trace line could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A metric was requested over an empty or degenerate input.
    #[error("undefined result: {0}")]
    Undefined(String),

    /// The simulation reached a state that violates one of its invariants.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("unknown stream {0}")]
    UnknownStream(u32),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
