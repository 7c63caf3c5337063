use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("failed to decode {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported checkpoint format version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("corrupted checkpoint: {0}")]
    Corruption(String),

    #[error("checkpoint holds a {found} component, expected {expected}")]
    ComponentMismatch { expected: String, found: String },

    #[error("training diverged at step {step}: non-finite {what}")]
    Divergence { step: u64, what: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for bad input, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_)
            | Error::NotFound(_)
            | Error::Parse { .. }
            | Error::Version { .. }
            | Error::ComponentMismatch { .. }
            | Error::DegenerateInput(_) => 1,
            Error::Decode { .. }
            | Error::Io { .. }
            | Error::Corruption(_)
            | Error::Divergence { .. }
            | Error::Tensor(_) => 2,
        }
    }
}

/// Byte offset of a serde_json error inside `text`.
pub(crate) fn json_error_offset(text: &str, err: &serde_json::Error) -> usize {
    let (line, column) = (err.line(), err.column());
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len();
    }
    text.len()
}
