use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("utterance {utt_id}: {message}")]
    Validation { utt_id: String, message: String },

    #[error("utterance {0}: every token was removed by sanitization")]
    EmptyAfterSanitize(String),

    #[error("utterance {0}: no word boundary satisfies the prompt/target length limits")]
    NoEligibleBoundary(String),

    #[error("boundary index {index} out of range for {n_tokens} tokens")]
    InvalidBoundary { index: usize, n_tokens: usize },

    #[error("rate must be positive, got {0}")]
    InvalidRate(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("mask selects no entries")]
    InvalidMask,

    #[error("sway coefficient {0} outside [-1, 1]")]
    InvalidCoefficient(f64),

    #[error("solver produced non-finite values at step {0}")]
    Diverged(usize),

    #[error("text needs {needed} frames but only {available} are available")]
    TextOverflow { needed: usize, available: usize },

    #[error("split rounds to an empty {0} region")]
    DegenerateSplit(&'static str),

    #[error("dataset mixes granularities {0} and {1}")]
    InvalidDataset(String, String),

    #[error("estimated duration {seconds:.3} s exceeds the cap of {cap:.1} s")]
    DurationOutOfRange { seconds: f64, cap: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
