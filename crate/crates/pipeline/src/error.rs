use std::path::PathBuf;

use thiserror::Error;

use crate::stage::Stage;

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("stage {stage} requires {kind} from stage {producer}")]
    MissingPrerequisite {
        stage: Stage,
        producer: Stage,
        kind: &'static str,
    },

    #[error("workdir {} is locked by another run (remove {} if that run is gone)", .0.display(), .0.join(crate::store::LOCK_FILE).display())]
    Locked(PathBuf),

    #[error("artifact {file} is corrupt: expected sha256 {expected}, found {actual}")]
    Corrupt {
        file: String,
        expected: String,
        actual: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: persona_align::Error,
    },
}

impl PipelineError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        PipelineError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. } => 2,
            PipelineError::MissingPrerequisite { .. } => 3,
            PipelineError::Core { source, .. } if is_backend(source) => 4,
            _ => 1,
        }
    }
}

fn is_backend(e: &persona_align::Error) -> bool {
    matches!(
        e,
        persona_align::Error::Backend { .. }
            | persona_align::Error::JudgeParse { .. }
            | persona_align::Error::EmptyTranslation(_)
    )
}

/// Attaches context to core errors.
pub(crate) trait Context<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for persona_align::Result<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| PipelineError::Core {
            context: context(),
            source,
        })
    }
}
