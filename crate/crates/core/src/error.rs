use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{what} at {location}: {message}")]
    Parse {
        what: &'static str,
        location: String,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("vocabulary is empty after filtering ({filters})")]
    EmptyVocabulary { filters: String },

    #[error("document {0:?} has no tokens")]
    EmptyDocument(String),

    #[error("embedding dimension mismatch at line {line}: expected {expected}, found {found}")]
    EmbeddingDimension {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("no embedding for vocabulary word {0:?}")]
    MissingEmbedding(String),

    #[error("zero-norm {side} vector at row {row}")]
    ZeroNorm { side: &'static str, row: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("distribution does not sum to one (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("gradients requested from a plan that did not converge")]
    NotConverged,

    #[error("transport between topics {k1} and {k2}: {source}")]
    TopicPair {
        k1: usize,
        k2: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "vocabulary mismatch: model expects {expected} words, corpus has {found}; \
         build the corpora on a united vocabulary"
    )]
    VocabularyMismatch { expected: usize, found: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, location: impl ToString, message: impl ToString) -> Self {
        Error::Parse {
            what,
            location: location.to_string(),
            message: message.to_string(),
        }
    }

    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Parse { .. } => "parse",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::EmptyVocabulary { .. } => "empty-vocabulary",
            Error::EmptyDocument(_) => "empty-document",
            Error::EmbeddingDimension { .. } => "embedding-dimension",
            Error::MissingEmbedding(_) => "missing-embedding",
            Error::ZeroNorm { .. } => "zero-norm",
            Error::Shape(_) => "shape",
            Error::NotNormalized { .. } => "not-normalized",
            Error::NonFinite(_) => "non-finite",
            Error::NotConverged => "not-converged",
            Error::TopicPair { .. } => "topic-pair",
            Error::VocabularyMismatch { .. } => "vocabulary-mismatch",
            Error::Checkpoint(_) => "checkpoint",
            Error::Diverged { .. } => "diverged",
        }
    }
}
