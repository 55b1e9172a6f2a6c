use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown {kind} `{name}`")]
    Lookup { kind: &'static str, name: String },

    #[error("training diverged at step {step} (loss {loss}){}", snapshot_note(.snapshot))]
    Divergence {
        step: u64,
        loss: f64,
        snapshot: Option<PathBuf>,
    },

    /// A stage of the dataset pipeline failed; prior artifacts are untouched.
    #[error("pipeline stage `{stage}` failed for record {record}: {message}")]
    Pipeline {
        record: String,
        stage: String,
        message: String,
        retriable: bool,
    },

    #[error("ingestion failed, missing: {}", .missing.join(", "))]
    Ingestion { missing: Vec<String> },

    #[error("client error: {0}")]
    Client(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn snapshot_note(snapshot: &Option<PathBuf>) -> String {
    match snapshot {
        Some(p) => format!(", snapshot at {}", p.display()),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

/// Process exit status for a command that failed with `err`.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Lookup { .. } => 1,
        Error::Divergence { .. } => 3,
        _ => 2,
    }
}
