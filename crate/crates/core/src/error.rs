use thiserror::Error;

/// Every failure the library can report.
///
/// Display strings are stable: the command-line front end prints them verbatim
/// and tests match on them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("clip too short: {len} samples < n_fft {n_fft}")]
    ClipTooShort { len: usize, n_fft: usize },
    #[error("invalid samples: {0}")]
    InvalidSamples(String),
    #[error("degenerate statistics: channel {channel} has std {std}")]
    DegenerateStatistics { channel: usize, std: f64 },
    #[error("no data")]
    NoData,
    #[error("numerical overflow: {0}")]
    NumericalOverflow(String),
    #[error("parameter/gradient mismatch: {0}")]
    ParamMismatch(String),
    #[error("input shape mismatch: expected {expected:?}, got {got:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("no such parameter group: {0}")]
    NoSuchParameterGroup(String),
    #[error("degenerate embedding: zero norm")]
    DegenerateEmbedding,
    #[error("invalid similarities: {0}")]
    InvalidSimilarities(String),
    #[error("invalid generator spec: {0}")]
    InvalidGeneratorSpec(String),
    #[error("insufficient subjects: {subjects} subjects for {splits} splits")]
    InsufficientSubjects { subjects: usize, splits: usize },
    #[error("invalid split spec: {0}")]
    InvalidSplit(String),
    #[error("batch too large: {batch} > pool of {pool}")]
    BatchTooLarge { batch: usize, pool: usize },
    #[error("undefined AUC: {0}")]
    UndefinedAuc(String),
    #[error("degenerate probe task: {0}")]
    DegenerateProbe(String),
    #[error("probe/embedding mismatch: probe dim {probe}, embedding dim {embedding}")]
    ProbeMismatch { probe: usize, embedding: usize },
    #[error("not a probability vector: {0}")]
    NotAProbability(String),
    #[error("misaligned predictions: {0}")]
    MisalignedPredictions(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
