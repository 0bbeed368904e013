use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),
    #[error("inconsistent records: {0}")]
    Records(String),
    #[error(transparent)]
    Core(#[from] lensless_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit status: 2 for specs that cannot run, 3 for solver
    /// divergence, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Spec(_) | HarnessError::MissingInput(_) => 2,
            HarnessError::Core(lensless_core::Error::Divergence { .. }) => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| HarnessError::Io {
            path: path.into(),
            source,
        })
    }
}
