use std::path::PathBuf;

use thiserror::Error;

use crate::backends::BackendError;
use crate::imaging::Dims;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {operand} is {found}, expected {expected}")]
    Shape {
        operand: &'static str,
        expected: Dims,
        found: Dims,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no detection at or above the confidence floor")]
    NoDetection,

    #[error("segmenter returned an empty mask")]
    EmptyMask,

    #[error("segmentation mask lies mostly outside its detection box ({containment:.3} contained)")]
    IncoherentSegmentation { containment: f64 },

    #[error("unparseable concept response: {message}")]
    Parse { message: String, raw: String },

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used in record statuses and FFI error codes.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Degenerate(_) => "degenerate",
            Error::Config(_) => "config",
            Error::Numeric(_) => "numeric",
            Error::Precondition(_) => "precondition",
            Error::NoDetection => "no-detection",
            Error::EmptyMask => "empty-mask",
            Error::IncoherentSegmentation { .. } => "incoherent-segmentation",
            Error::Parse { .. } => "parse",
            Error::Backend(_) => "backend",
            Error::Validation(_) => "validation",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Json { .. } => "json",
        }
    }
}
