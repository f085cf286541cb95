use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure classes when parsing a compressed archive.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic bytes {found:?}, expected \"NKCZ\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown codec id {0}")]
    UnknownCodec(u8),
    #[error("archive header truncated while reading {0}")]
    TruncatedHeader(&'static str),
    #[error("stream truncated inside element record {element_index}")]
    TruncatedElement { element_index: u64 },
    #[error("corrupt coded payload: {0}")]
    CorruptPayload(String),
    #[error("element {element_index}: bitmap has {bitmap_bits} bits set but kept_count is {kept_count}")]
    BitmapMismatch {
        element_index: u64,
        bitmap_bits: u32,
        kept_count: u32,
    },
    #[error("element {element_index}: non-finite coefficient")]
    NonFinite { element_index: u64 },
    #[error("{0} trailing bytes after archive")]
    TrailingBytes(usize),
    #[error("field name is not valid UTF-8")]
    BadFieldName,
    #[error("field name longer than 65535 bytes")]
    FieldNameTooLong,
    #[error("blocks have inconsistent order: expected {expected}, found {found} at element {element_id}")]
    OrderMismatch {
        expected: usize,
        found: usize,
        element_id: u64,
    },
    #[error("element {element_id}: kept mask disagrees with coefficients")]
    MaskInconsistent { element_id: u64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polynomial order {0}; expected 1..=32")]
    InvalidOrder(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("format error: {0}")]
    Format(#[from] FormatError),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("in-situ task failed at step {step}: {source}")]
    Task {
        step: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("lifecycle violation: {0}")]
    Lifecycle(String),
    #[error("stage channel disconnected")]
    Disconnected,
    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Strips `Task` wrappers to reach the underlying failure.
    pub fn root(&self) -> &Error {
        match self {
            Error::Task { source, .. } => source.root(),
            other => other,
        }
    }
}
