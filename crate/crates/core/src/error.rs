use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed JSON in {context}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    /// A log contained no parseable frame.
    #[error("no parseable CAN frames in {0}")]
    EmptyStream(String),

    /// `auto` format detection could not classify the log.
    #[error("cannot detect log format at line {line}: {text:?}")]
    FormatDetection { line: usize, text: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Attack-flagged frames reached baseline construction.
    #[error("baseline input contains {attack_frames} attack-flagged frames")]
    Contamination { attack_frames: usize },

    #[error("baseline needs at least {required} frames, got {frames}")]
    InsufficientBaseline { frames: usize, required: usize },

    /// Artifacts built under different window lengths or thresholds.
    #[error("incompatible artifacts: {0}")]
    Incompatible(String),

    /// Zero or several MCQ option conditions held for a window.
    #[error("template {template} on window {window_id}: expected exactly one satisfied option, got {satisfied:?}")]
    Exclusivity { template: String, window_id: String, satisfied: Vec<char> },

    #[error("no windows to generate questions from")]
    EmptyDataset,

    #[error("dataset integrity error: {0}")]
    Integrity(String),

    #[error("cannot split dataset: {0}")]
    Split(String),

    /// A few-shot example shares its window with the evaluated item.
    #[error("few-shot example from window {window_id} leaks into evaluation item {qa_id}")]
    Leakage { qa_id: String, window_id: String },

    #[error("endpoint authentication failed: {0}")]
    Auth(String),

    #[error("endpoint error: {0}")]
    Endpoint(String),

    /// The evaluation stopped early; completed records are persisted.
    #[error("evaluation aborted after {completed} of {total} items: {reason}")]
    Aborted { completed: usize, total: usize, reason: String },
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }
}
