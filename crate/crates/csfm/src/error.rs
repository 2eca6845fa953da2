//! Error type shared across the crate.

use crate::tensor::Shape;

/// Everything that can go wrong in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not satisfy an operation's contract.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// Input data (images, datasets, checkpoints) is malformed or missing.
    #[error("bad data: {0}")]
    Data(String),

    /// A NaN or infinity surfaced where a finite value was required.
    #[error("non-finite value in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },

    /// The gradient tape was used outside its contract (untracked loss,
    /// backward on a disabled tape, missing gradient for a parameter).
    #[error("autodiff error: {0}")]
    Autodiff(String),

    /// A checkpoint file could not be parsed or does not match the model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Underlying I/O failure.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Image decode/encode failure.
    #[error("image error on {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// Shorthand for a shape error with a formatted detail message.
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Shorthand for an I/O error tagged with the offending path.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Helper for shape errors: render a [`Shape`] compactly inside messages.
pub(crate) fn fmt_shape(s: Shape) -> String {
    format!("{}x{}x{}x{}", s.n, s.c, s.h, s.w)
}
