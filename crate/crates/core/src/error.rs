use std::path::PathBuf;

use thiserror::Error;

use crate::mask::Size2D;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size {width}x{height}: dimensions must be positive")]
    InvalidSize { width: usize, height: usize },

    #[error("raster data has {actual} elements, expected {expected}")]
    DataLength { expected: usize, actual: usize },

    #[error("mask value {value} at index {index} is not 0 or 1")]
    NonBinaryValue { index: usize, value: u8 },

    #[error("probability {value} at index {index} is outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },

    #[error("threshold {0} must lie strictly between 0 and 1")]
    InvalidThreshold(f64),

    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: Size2D, actual: Size2D },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: unsupported pixel format {format}")]
    UnsupportedFormat { path: PathBuf, format: String },

    #[error("{path}: RGB mask is not grayscale-valued at pixel ({x}, {y})")]
    NonGrayscaleMask { path: PathBuf, x: u32, y: u32 },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("distance transform needs at least one background pixel (no background reference)")]
    NoBackground,

    #[error("invalid stratum thresholds: need 0 < thin_below ({thin_below}) <= thick_above ({thick_above})")]
    InvalidStrata { thin_below: f64, thick_above: f64 },

    #[error("stratum labels mark pixel {index} as vessel but the ground truth there is 0")]
    LabelMismatch { index: usize },

    #[error("invalid condition {name}: {reason}")]
    InvalidCondition { name: String, reason: String },

    #[error("fold {0} has no evaluated images")]
    EmptyFold(usize),

    #[error("image {0} has no fold assignment")]
    MissingFold(String),

    #[error("invalid statistical input: {0}")]
    StatInput(String),

    #[error("invalid phantom: {0}")]
    Phantom(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("image {image_id}: {source}")]
    InImage {
        image_id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn in_image(self, image_id: &str) -> Self {
        Error::InImage { image_id: image_id.to_string(), source: Box::new(self) }
    }
}
