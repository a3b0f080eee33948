use std::path::PathBuf;

use embinv_autograd::BlobError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("corpus {} contains no records", .0.display())]
    EmptyCorpus(PathBuf),
    #[error("text has no tokens")]
    EmptyText,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("victim protocol error: {0}")]
    Protocol(String),
    #[error("embedding cache {} is stale ({reason}); delete it and its manifest to regenerate", path.display())]
    StaleCache { path: PathBuf, reason: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error(transparent)]
    Blob(#[from] BlobError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
