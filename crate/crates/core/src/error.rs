use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CaneError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CaneError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Format { file: String, line: usize, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("node {0} has no annotated neighbors")]
    NoNeighborEvidence(usize),

    #[error("annotation failed: {0}")]
    Annotation(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CaneError>,
    },
}

impl CaneError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CaneError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(file: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        CaneError::Format {
            file: file.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn arg(message: impl Into<String>) -> Self {
        CaneError::Argument(message.into())
    }

    /// Innermost error, unwrapping stage context.
    pub fn root(&self) -> &CaneError {
        match self {
            CaneError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| CaneError::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
