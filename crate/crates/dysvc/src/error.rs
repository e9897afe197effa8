use std::path::PathBuf;

/// Crate-wide error type. Exit-code mapping for the CLI lives in
/// [`Error::exit_code`]: integrity failures are distinguished from
/// ordinary validation failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("attention mask row {row} is fully masked")]
    DegenerateMask { row: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("parameter {0:?} already exists")]
    DuplicateParameter(String),

    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),

    #[error("trainable parameter {0:?} has no gradient")]
    MissingGradient(String),

    #[error("unknown speaker {0:?}")]
    UnknownSpeaker(String),

    #[error("unknown symbol {symbol:?} in utterance {utterance:?}")]
    UnknownSymbol { symbol: String, utterance: String },

    #[error("utterance {utterance:?} of speaker {speaker:?} has no counterpart for speaker {missing:?}")]
    UnpairedUtterance {
        utterance: String,
        speaker: String,
        missing: String,
    },

    #[error("wav {path}: {msg}")]
    Wav { path: PathBuf, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("manifest {path} line {line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config {path}: {msg}")]
    Config { path: PathBuf, msg: String },

    #[error("integrity error in {path}: {msg}")]
    Integrity { path: PathBuf, msg: String },

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("score table: {0}")]
    ScoreTable(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// CLI exit code: 0 is success, 2 a validation error, 3 an integrity error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Integrity { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
