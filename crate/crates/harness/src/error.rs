use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// The experiment spec or command line is unusable.
    #[error("config error: {0}")]
    Config(String),

    #[error("trace schema mismatch in {}: {reason}", path.display())]
    Schema { path: PathBuf, reason: String },

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] dmtl_core::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::File {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure stems from user input rather than a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::Json(_)
                | HarnessError::Core(dmtl_core::Error::InvalidArgument(_))
                | HarnessError::Core(dmtl_core::Error::Dataset { .. })
        )
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
