use serde::{Deserialize, Serialize};

use super::BankError;
use crate::tensor::Matrix;

/// Per-frame token matrices of one video, `T` frames of `S x d` tokens, with
/// non-decreasing frame timestamps in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStack {
    frames: Vec<Matrix>,
    timestamps: Vec<f64>,
}

/// Tokens after projection into the text space; mirrors a [`TokenStack`]
/// frame for frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedStack {
    frames: Vec<Matrix>,
}

fn check_frames(frames: &[Matrix]) -> Result<(usize, usize), BankError> {
    let first = frames.first().ok_or(BankError::EmptyStack)?;
    let shape = first.shape();
    if shape.0 == 0 || shape.1 == 0 {
        return Err(BankError::Shape("frames must have tokens and features".into()));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.shape() != shape {
            return Err(BankError::Shape(format!(
                "frame {i} has shape {:?}, expected {shape:?}",
                f.shape()
            )));
        }
        if !f.is_finite() {
            return Err(BankError::Shape(format!("frame {i} has non-finite features")));
        }
    }
    Ok(shape)
}

impl TokenStack {
    pub fn new(frames: Vec<Matrix>, timestamps: Vec<f64>) -> Result<Self, BankError> {
        check_frames(&frames)?;
        if frames.len() != timestamps.len() {
            return Err(BankError::Shape(format!(
                "{} frames but {} timestamps",
                frames.len(),
                timestamps.len()
            )));
        }
        if timestamps.iter().any(|t| !t.is_finite()) {
            return Err(BankError::NanTimestamp);
        }
        if timestamps.windows(2).any(|w| w[1] < w[0]) {
            return Err(BankError::UnorderedTimestamps);
        }
        Ok(Self { frames, timestamps })
    }

    pub fn frames(&self) -> &[Matrix] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &Matrix {
        &self.frames[i]
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.frames[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].cols()
    }

    /// Each frame's time relative to the latest frame (all `<= 0`).
    pub fn offsets_from_latest(&self) -> Vec<f64> {
        let now = *self.timestamps.last().expect("stack is non-empty");
        self.timestamps.iter().map(|t| t - now).collect()
    }

    /// All tokens stacked frame-major, `(T*S) x d`.
    pub fn flatten(&self) -> Matrix {
        Matrix::vstack(&self.frames).expect("frames share a shape")
    }
}

impl ProjectedStack {
    pub fn new(frames: Vec<Matrix>) -> Result<Self, BankError> {
        check_frames(&frames)?;
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Matrix] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].cols()
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.frames[0].rows()
    }

    /// Checks that this stack mirrors `stack` frame for frame.
    pub fn check_aligned(&self, stack: &TokenStack) -> Result<(), BankError> {
        if self.len() != stack.len() || self.tokens_per_frame() != stack.tokens_per_frame() {
            return Err(BankError::Shape(format!(
                "projected stack {}x{} does not mirror token stack {}x{}",
                self.len(),
                self.tokens_per_frame(),
                stack.len(),
                stack.tokens_per_frame()
            )));
        }
        Ok(())
    }
}

/// JSON layout of a token stack: `frames[t][s][feature]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenStackFile {
    pub timestamps: Vec<f64>,
    pub frames: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<TokenStackFile> for TokenStack {
    type Error = BankError;

    fn try_from(f: TokenStackFile) -> Result<Self, Self::Error> {
        let frames = f
            .frames
            .iter()
            .map(|rows| Matrix::from_rows(rows).map_err(BankError::from))
            .collect::<Result<Vec<_>, _>>()?;
        TokenStack::new(frames, f.timestamps)
    }
}

impl From<&TokenStack> for TokenStackFile {
    fn from(s: &TokenStack) -> Self {
        TokenStackFile {
            timestamps: s.timestamps.clone(),
            frames: s
                .frames
                .iter()
                .map(|m| (0..m.rows()).map(|r| m.row(r).to_vec()).collect())
                .collect(),
        }
    }
}
