use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("optimizer: non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("non-finite loss in component `{component}` at epoch {epoch}, step {step}")]
    NonFiniteLoss { component: String, epoch: usize, step: usize },

    #[error("missing file {path}{}", sample.as_ref().map(|s| format!(" (sample `{s}`)")).unwrap_or_default())]
    MissingFile { path: PathBuf, sample: Option<String> },

    #[error("schema violation in {path}: {reason}")]
    Schema { path: PathBuf, reason: String },

    #[error("sample `{sample}`: {modality} dim mismatch, manifest declares {expected:?} but file holds {found:?}")]
    DimMismatch {
        sample: String,
        modality: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("sample `{sample}` appears in both `{first}` and `{second}` splits")]
    SplitOverlap { sample: String, first: String, second: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt tensor data: {0}")]
    Corrupt(String),

    #[error("missing field `{0}`")]
    MissingField(String),

    #[error("label mismatch: {0}")]
    Label(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
