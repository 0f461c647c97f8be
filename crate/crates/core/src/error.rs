use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("midi parse error: {0}")]
    MidiParse(String),

    #[error("invalid note events: {0}")]
    InvalidEvents(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("transposition of {0} semitones is outside [-11, 11]")]
    TransposeRange(i32),

    #[error("cosine similarity is undefined for two all-zero functions")]
    UndefinedSimilarity,

    #[error("unknown instrument: {0}")]
    UnknownInstrument(String),

    #[error("instrument table: {0}")]
    InstrumentTable(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("reference database is empty")]
    EmptyDatabase,

    #[error("reference has {reference} segments but source needs {source_len}")]
    ReferenceTooShort { reference: usize, source_len: usize },

    #[error("source segment has no melody-tagged track")]
    MissingMelody,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
