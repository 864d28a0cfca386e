use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{}record {record}: field `{field}` {message}", line_prefix(*.line))]
    Invalid {
        line: Option<usize>,
        record: String,
        field: String,
        message: String,
    },

    #[error("unknown schema `{0}` (expected one of qa, persona, pair, annotation, eval)")]
    UnknownSchema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backend failure{}: {message}", record.as_ref().map(|r| format!(" on record {r}")).unwrap_or_default())]
    Backend {
        record: Option<String>,
        message: String,
        retryable: bool,
    },

    #[error("empty translation for record {0}")]
    EmptyTranslation(String),

    #[error("template slot `{0}` is unbound")]
    UnboundSlot(String),

    #[error("item {0} has split votes and must be re-annotated before pairing")]
    UnresolvedVote(String),

    #[error("pair id sets differ: only in reward-model list {only_rm:?}; only in judge list {only_judge:?}")]
    IdMismatch {
        only_rm: Vec<String>,
        only_judge: Vec<String>,
    },

    #[error("judge output could not be parsed: {raw:?}")]
    JudgeParse { raw: String },

    #[error("character {ch:?} at position {position} is not in the vocabulary")]
    Unencodable { ch: char, position: usize },

    #[error("policy is frozen and cannot be trained")]
    Frozen,

    #[error("reference policy missing: {0}")]
    ReferenceMissing(String),

    #[error("reference policy is not frozen")]
    ReferenceNotFrozen,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown persona `{0}`")]
    UnknownPersona(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

fn line_prefix(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(record: &str, field: &str, message: impl Into<String>) -> Self {
        Error::Invalid {
            line: None,
            record: record.to_string(),
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Backend { retryable: true, .. })
    }

    pub(crate) fn at_line(self, line: usize) -> Self {
        match self {
            Error::Invalid {
                record, field, message, ..
            } => Error::Invalid {
                line: Some(line),
                record,
                field,
                message,
            },
            other => other,
        }
    }
}
