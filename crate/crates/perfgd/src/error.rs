use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run failed: {0}")]
    Runtime(String),
}

impl BenchError {
    /// Process exit code: 1 for bad input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 1,
            BenchError::Io { .. } | BenchError::Runtime(_) => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<perfgd_core::Error> for BenchError {
    fn from(e: perfgd_core::Error) -> Self {
        match e {
            perfgd_core::Error::Spec(_)
            | perfgd_core::Error::Config(_)
            | perfgd_core::Error::Dimension { .. } => BenchError::Config(e.to_string()),
            _ => BenchError::Runtime(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
