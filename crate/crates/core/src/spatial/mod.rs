//! Space-aware tokenization: grid quantization, the remapped space
//! vocabulary, and pinhole geometry linking pixels to 3D points.
//!
//! Positions are expressed in the ego frame. A point is quantized to a
//! [`GridIndex`], and each axis index is written as one rarely used token of a
//! base vocabulary, so a location becomes three ordinary words a language
//! model can emit.

mod camera;
mod grid;
mod vocab;

pub use camera::{CameraCalib, Pixel};
pub use grid::{GridIndex, GridSpec};
pub use vocab::{parse_vocab_frequencies, synthetic_base_vocab, GridAxis, SpaceVocab};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpatialError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("point {0:?} lies outside the grid extent")]
    OutOfExtent([f64; 3]),
    #[error("grid index {0:?} is out of range")]
    IndexOutOfRange(GridIndex),
    #[error("vocabulary has {available} tokens but the grid needs {needed}")]
    VocabTooSmall { needed: usize, available: usize },
    #[error("token {0:?} appears more than once in the base vocabulary")]
    DuplicateToken(String),
    #[error("token {0:?} is empty or contains whitespace")]
    InvalidToken(String),
    #[error("vocabulary file line {line}: {message}")]
    VocabFormat { line: usize, message: String },
    #[error("{0:?} is not a space token")]
    UnknownToken(String),
    #[error("expected 3 space tokens, got {0}")]
    WrongTokenCount(usize),
    #[error("token {token:?} does not belong to axis slot {position}")]
    AxisOrder { token: String, position: usize },
    #[error("invalid calibration: {0}")]
    InvalidCalib(String),
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
}

/// Quantizes an ego-frame point and writes it as an x/y/z token triple.
pub fn encode_point(
    point: [f64; 3],
    spec: &GridSpec,
    vocab: &SpaceVocab,
) -> Result<(GridIndex, String), SpatialError> {
    let idx = spec.quantize(point)?;
    Ok((idx, vocab.encode_text(idx)?))
}
