use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },

    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },

    #[error("query {query_id:?} references unknown image {image_id:?}")]
    UnknownRelevantId { query_id: String, image_id: String },

    #[error("invalid attribute scheme: {0}")]
    InvalidScheme(String),

    #[error("zero-norm vector")]
    ZeroNormVector,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty candidate set")]
    EmptyCandidateSet,

    #[error("no prediction for image {0:?}")]
    MissingPrediction(String),

    #[error("no label for image {0:?}")]
    MissingLabel(String),

    #[error("bag refers to unknown query {0:?}")]
    UnknownQuery(String),

    #[error("empty input")]
    EmptyInput,

    #[error("no query has any relevant image")]
    NoRelevantImages,

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("training diverged (non-finite loss at epoch {epoch})")]
    NonFiniteLoss { epoch: usize },

    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),

    #[error("all x values are equal")]
    DegenerateX,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("zero variance in ranks")]
    ZeroVariance,

    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// True for errors caused by bad settings rather than bad data or I/O.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidScheme(_)
                | Error::InvalidAlpha(_)
                | Error::InvalidSpec(_)
                | Error::InvalidConfig(_)
                | Error::MissingPrediction(_)
                | Error::MissingLabel(_)
                | Error::EmptyTrainingSet
                | Error::NonFiniteLoss { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
