use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image file for record `{image_id}` not found at {}", path.display())]
    MissingImage { image_id: String, path: PathBuf },

    #[error("malformed annotation at line {line}: {message}")]
    MalformedAnnotation { line: usize, message: String },

    #[error("record `{image_id}`: subfigure references label class `{class}` which is absent from its labels")]
    DanglingLabelClass { image_id: String, class: String },

    #[error("record `{image_id}` failed validation: {message}")]
    InvalidRecord { image_id: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint does not match the configured model: {0}")]
    CheckpointMismatch(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{} already exists and is not empty (pass --force to overwrite)", .0.display())]
    OutputExists(PathBuf),

    #[error("missing input: {0}")]
    Missing(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
