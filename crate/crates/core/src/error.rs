use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures raised while decoding a wire message.
///
/// Each variant has a stable numeric [`code`](WireError::code) so that
/// operators can tell failures apart from logs alone.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported wire version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("truncated message: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("payload contains non-finite values")]
    NonFinitePayload,
}

impl WireError {
    pub fn code(&self) -> u8 {
        match self {
            WireError::BadMagic(_) => 1,
            WireError::UnsupportedVersion(_) => 2,
            WireError::UnknownType(_) => 3,
            WireError::Truncated { .. } => 4,
            WireError::CrcMismatch { .. } => 5,
            WireError::TrailingBytes(_) => 6,
            WireError::NonFinitePayload => 7,
        }
    }
}

/// Failures of the one-shot communication round.
#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("message for round {got} received while running round {expected}")]
    RoundMismatch { expected: u32, got: u32 },
    #[error("message dimension {got} does not match expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("checksum of message from site {site} does not match its payload")]
    ChecksumFailure { site: u32 },
    #[error("no gradient from the hub site among the collected messages")]
    MissingHub,
    #[error("duplicate message from site {0}")]
    DuplicateSite(u32),
    #[error("unexpected message from site {0}")]
    UnexpectedSite(u32),
    #[error("expected a {expected} message")]
    UnexpectedKind { expected: &'static str },
    #[error("no messages to aggregate")]
    Empty,
    #[error("round deadline exceeded; still waiting for sites {missing:?}")]
    Timeout { missing: Vec<u32> },
    #[error("site {site} failed: {reason}")]
    SiteFailed { site: u32, reason: String },
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("iterates diverged at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerical pipeline (as opposed to usage,
    /// I/O or transport problems).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite | Error::Numerical(_) | Error::Divergence { .. }
        )
    }
}

impl From<WireError> for Error {
    fn from(e: WireError) -> Self {
        Error::Protocol(ProtocolError::Wire(e))
    }
}
