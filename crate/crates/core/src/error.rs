use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Input data violates an operation's preconditions (shape, finiteness, simplex).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A scalar argument lies outside the function's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A model or pooling configuration is inconsistent. `key` names the offending field.
    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    /// The operation has no meaning for the requested variant or pooling kind.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    TrainingDiverged { epoch: usize, loss: f64 },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
