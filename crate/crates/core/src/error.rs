use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
///
/// Validation and shape errors carry the module that raised them so that the
/// CLI can report provenance without a backtrace.
#[derive(Debug, Error)]
pub enum Error {
    #[error("[{module}] shape error in {op}: {detail}")]
    Shape {
        module: &'static str,
        op: &'static str,
        detail: String,
    },

    #[error("[numeric-kernel] non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("[numeric-kernel] degenerate shape for {op}: {detail}")]
    DegenerateShape { op: &'static str, detail: String },

    #[error("[{module}] config error: {detail}")]
    Config { module: &'static str, detail: String },

    #[error("[{module}] validation error on `{field}`: {reason}")]
    Validation {
        module: &'static str,
        field: String,
        reason: String,
    },

    #[error("[{module}] index {index} out of range (len {len}) in {what}")]
    IndexOutOfRange {
        module: &'static str,
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("[{module}] internal consistency error: {detail}")]
    Consistency { module: &'static str, detail: String },

    #[error("[scene-model] parse error in {}: line {line}, column {column}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        msg: String,
    },

    #[error("[scene-model] bad magic in tensor container: expected \"CRLN\", found {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("[scene-model] unsupported container version {0}")]
    UnsupportedVersion(u32),

    #[error("[scene-model] truncated container: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("[scene-model] duplicate tensor name `{0}`")]
    DuplicateName(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(module: &'static str, op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            module,
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn validation(module: &'static str, field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            module,
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Config {
            module,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the filesystem rather than by file contents.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
