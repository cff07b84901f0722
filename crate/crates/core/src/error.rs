use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("label {label} out of range for {num_classes} classes (row {row})")]
    InvalidLabel {
        row: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("all {0} pairs in the batch are degenerate")]
    DegenerateBatch(usize),

    #[error("centroid {0} is all-zero")]
    DegenerateCentroid(usize),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error in {}{}: {message}", path.display(), offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    Format {
        path: PathBuf,
        offset: Option<u64>,
        message: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: Option<u64>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }
}
