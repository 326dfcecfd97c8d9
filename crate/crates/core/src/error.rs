use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("tensor of shape {shape:?} cannot hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("index {index:?} out of bounds for shape {shape:?}")]
    IndexOutOfBounds { index: Vec<usize>, shape: Vec<usize> },

    #[error("{0}: empty input")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sentence of length {len} is shorter than kernel window {window}")]
    SentenceTooShort { len: usize, window: usize },

    #[error("token index {index} outside vocabulary of {size} rows")]
    TokenOutOfRange { index: usize, size: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("unknown activation `{0}`")]
    UnknownActivation(String),

    #[error("unknown variant `{0}`")]
    UnknownVariant(String),

    #[error("forward trace does not match the model: {0}")]
    StaleTrace(String),

    #[error("attention maps can only be exported from an eval-mode trace")]
    TraceNotEval,

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("embedding dimension {found} does not match model dimension {expected}")]
    EmbeddingDimension { expected: usize, found: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("word2vec file {path}: {message} (byte offset {offset})")]
    Word2Vec {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            context: context.into(),
            source,
        }
    }

    /// Short stable identifier for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } | Error::DataLength { .. } => "shape",
            Error::IndexOutOfBounds { .. } => "index",
            Error::EmptyInput(_) => "empty-input",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::SentenceTooShort { .. } => "sentence-too-short",
            Error::TokenOutOfRange { .. } => "token-range",
            Error::LabelOutOfRange { .. } => "label-range",
            Error::UnknownActivation(_) => "unknown-activation",
            Error::UnknownVariant(_) => "unknown-variant",
            Error::StaleTrace(_) => "stale-trace",
            Error::TraceNotEval => "trace-mode",
            Error::NonFiniteGradient(_) => "non-finite-gradient",
            Error::EmbeddingDimension { .. } => "embedding-dimension",
            Error::Parse { .. } => "parse",
            Error::Word2Vec { .. } => "word2vec",
            Error::Checkpoint(_) => "checkpoint",
            Error::EmptyDataset(_) => "empty-dataset",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
