use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures while decoding a persisted prediction log.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes: expected \"EPLG\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported log format version {0}")]
    UnsupportedVersion(u16),
    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("dimension mismatch: header implies {expected} bytes, file holds {actual}")]
    DimMismatch { expected: u64, actual: u64 },
    #[error("malformed document: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments or data that violate an operation's preconditions.
    #[error("invalid input: {0}")]
    Input(String),
    /// The operation needs data the log does not carry (e.g. probabilities).
    #[error("missing capability: {0}")]
    Capability(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Format(_) | Error::Io(_) => 2,
            Error::Capability(_) => 3,
            Error::Divergence { .. } => 4,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(FormatError::Malformed(e.to_string()))
    }
}
