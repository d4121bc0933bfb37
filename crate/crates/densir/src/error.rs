//! One error enum for the whole crate.
//!
//! File-format and referential problems carry the offending path (and line,
//! for text formats) so CLI users see `file:line: message` and can jump
//! straight to the bad record. Numeric problems (`NonFinite`,
//! `DimensionMismatch`) indicate a bug or a corrupt artifact rather than bad
//! user input, and abort whatever training/mining run raised them.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed record in a text artifact; `line` is 1-based.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A precondition on an operation's inputs was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// NaN or infinity where a finite number is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The file's leading magic bytes are not the expected format tag;
    /// `expected` reads like "a checkpoint file" / "an index file".
    #[error("{path}: not {expected}")]
    BadMagic {
        path: PathBuf,
        expected: &'static str,
    },

    #[error("{path}: unsupported {kind} format version {found} (this build reads version {supported})")]
    UnsupportedVersion {
        path: PathBuf,
        kind: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("{path}: truncated file ({context})")]
    Truncated { path: PathBuf, context: String },

    #[error("{path}: checksum mismatch, file is corrupt")]
    ChecksumMismatch { path: PathBuf },

    /// An index was paired with a checkpoint other than the one it was built
    /// from.
    #[error(
        "index was built from checkpoint {index_fingerprint}, \
         but the supplied checkpoint has fingerprint {checkpoint_fingerprint}"
    )]
    FingerprintMismatch {
        index_fingerprint: String,
        checkpoint_fingerprint: String,
    },

    #[error("config: {0}")]
    Config(String),

    /// Wraps any failure inside a named pipeline step.
    #[error("pipeline step '{step}' failed: {source}")]
    PipelineStep {
        step: String,
        #[source]
        source: Box<Error>,
    },

    #[error("output directory {path} is locked by another run (delete {lock} if that run is dead)")]
    Locked { path: PathBuf, lock: PathBuf },

    #[error(
        "{path}: existing manifest has configuration fingerprint {found}, \
         this run has {expected}; refusing to mix artifacts — use a fresh output directory"
    )]
    ManifestMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    pub fn non_finite(message: impl Into<String>) -> Self {
        Error::NonFinite(message.into())
    }

    pub fn dims(message: impl Into<String>) -> Self {
        Error::DimensionMismatch(message.into())
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    /// Tags an error with the pipeline step it occurred in:
    /// `result.map_err(Error::in_step("step3: mine hard negatives"))`.
    pub fn in_step(step: impl Into<String>) -> impl FnOnce(Error) -> Error {
        let step = step.into();
        move |source| Error::PipelineStep {
            step,
            source: Box::new(source),
        }
    }
}
