use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed XML at line {line}: {message}")]
    Xml { line: u32, message: String },

    /// Annotation that contradicts its sentence (bad offsets, target mismatch).
    #[error("sentence {sentence_id}: {message}")]
    Validation { sentence_id: String, message: String },

    #[error("sentence {sentence_id}: opinion {first} overlaps opinion {second}")]
    OpinionOverlap {
        sentence_id: String,
        first: String,
        second: String,
    },

    #[error("alignment failed for sentence {sentence_id}: {message}")]
    Alignment { sentence_id: String, message: String },

    /// Line-oriented text formats (CoNLL-U, vector files, JSON-lines).
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("invalid tree {sentence_id}: {message}")]
    Tree { sentence_id: String, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite loss at epoch {epoch}, sentence {sentence_id} (loss = {loss})")]
    NonFiniteLoss {
        epoch: usize,
        sentence_id: String,
        loss: f64,
    },

    #[error("unsupported checkpoint format version {found} (this build reads {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// Short machine-readable category name, used by the CLI error record.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Xml { .. } => "xml",
            Error::Validation { .. } => "validation",
            Error::OpinionOverlap { .. } => "opinion_overlap",
            Error::Alignment { .. } => "alignment",
            Error::Format { .. } => "format",
            Error::Tree { .. } => "tree",
            Error::Argument(_) => "argument",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::Integrity(_) => "integrity",
            Error::Incompatible(_) => "incompatible",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
