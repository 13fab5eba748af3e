use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("training diverged at epoch {epoch}: validation W2 {w2:.4e} exceeded {threshold:.4e}")]
    Diverged { epoch: usize, w2: f64, threshold: f64 },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("{what} hash mismatch: file has {found}, expected {expected}")]
    HashMismatch {
        what: &'static str,
        found: String,
        expected: String,
    },

    #[error("payload checksum mismatch in {path}")]
    Checksum { path: PathBuf },

    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("malformed file {path}: {detail}")]
    Malformed { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure(msg.into())
    }
}

pub(crate) fn ensure_dim(what: &str, found: usize, expected: usize) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{what}: dimension {found} does not match expected {expected}"
        )))
    }
}
