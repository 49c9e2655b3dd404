use thiserror::Error;

use crate::model::MentionSpan;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("span [{}, {}] out of bounds for document with {len} tokens", .span.start, .span.end)]
    SpanBounds { span: MentionSpan, len: usize },

    #[error("document {doc_id}: {reason}")]
    Validation { doc_id: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("phase mismatch: {0}")]
    PhaseMismatch(String),

    #[error("clusters are not a partition: mention {0} appears in more than one cluster")]
    Partition(String),

    #[error("cannot sample {requested} mentions, only {available} available")]
    SamplingCapacity { requested: usize, available: usize },

    #[error("cannot select a victim from an empty cache")]
    EmptyCache,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error("document ids do not match: {0}")]
    DocMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Usage-class errors map to exit code 2 in the CLI, everything else to 1.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::PhaseMismatch(_))
    }
}
