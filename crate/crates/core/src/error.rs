use std::io;

/// Errors produced by every fallible operation in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// Malformed binary file (embedding, centroid, checkpoint or index).
    #[error("codec error: {0}")]
    Codec(String),

    /// Malformed metadata record.
    #[error("metadata error: {0}")]
    Metadata(String),

    /// Bad key=value config file.
    #[error("config error: {0}")]
    Config(String),

    /// Violated precondition or domain invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Tensor/vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Training loss became non-finite.
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl Error {
    /// True for errors caused by invalid user input rather than the
    /// environment. The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
