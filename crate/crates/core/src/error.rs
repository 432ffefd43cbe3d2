use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("unknown character {ch:?} in {word:?}")]
    UnknownCharacter { word: String, ch: char },
    #[error("out-of-vocabulary word {0:?}")]
    OutOfVocabularyWord(String),
    #[error("malformed pinyin syllable {0:?}")]
    MalformedPinyin(String),
    #[error("id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("invalid data file {path}: {reason}")]
    InvalidData { path: String, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("embedding dimension {0} must be even")]
    OddEmbeddingDim(usize),
    #[error("duration length {durations} does not match sequence length {tokens}")]
    LengthMismatch { durations: usize, tokens: usize },
    #[error("all durations are zero")]
    EmptyOutput,
    #[error("ground-truth duration at token {0} is not positive")]
    NonPositiveGroundTruthDuration(usize),
    #[error("feature kind mismatch: expected {expected}, got {got}")]
    KindMismatch { expected: String, got: String },

    #[error("input of {len} samples is shorter than n_fft={n_fft}")]
    InputTooShort { len: usize, n_fft: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("missing feature for record {0:?}")]
    MissingFeature(String),
    #[error("record {0:?} has no durations")]
    MissingDurations(String),
    #[error("record {id:?}: durations sum to {sum} but feature has {frames} frames")]
    DurationMismatch { id: String, sum: usize, frames: usize },
    #[error("loss became non-finite at step {0}")]
    NaNLoss(usize),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the underlying file system or stream.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Wav(hound::Error::IoError(_)) => true,
            Error::Csv(c) => matches!(c.kind(), csv::ErrorKind::Io(_)),
            _ => false,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyInput => "EmptyInput",
            Error::UnknownCharacter { .. } => "UnknownCharacter",
            Error::OutOfVocabularyWord(_) => "OutOfVocabularyWord",
            Error::MalformedPinyin(_) => "MalformedPinyin",
            Error::IdOutOfRange { .. } => "IdOutOfRange",
            Error::InvalidData { .. } => "InvalidData",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::OddEmbeddingDim(_) => "OddEmbeddingDim",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::EmptyOutput => "EmptyOutput",
            Error::NonPositiveGroundTruthDuration(_) => "NonPositiveGroundTruthDuration",
            Error::KindMismatch { .. } => "KindMismatch",
            Error::InputTooShort { .. } => "InputTooShort",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::MissingFeature(_) => "MissingFeature",
            Error::MissingDurations(_) => "MissingDurations",
            Error::DurationMismatch { .. } => "DurationMismatch",
            Error::NaNLoss(_) => "NaNLoss",
            Error::Checkpoint(_) => "Checkpoint",
            Error::Io { .. } => "Io",
            Error::Wav(_) => "Wav",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}
