use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Body of one caption request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub image_ref: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CaptionError {
    /// Worth retrying later.
    #[error("captioner unreachable: {0}")]
    Unreachable(String),
    #[error("malformed captioner response: {0}")]
    Malformed(String),
}

/// Anything that can caption an image.
pub trait Captioner: Send + Sync {
    fn caption(&self, request: &CaptionRequest) -> Result<String, CaptionError>;
}

/// Answers `caption:<image_ref>`, or fails for the listed images.
#[derive(Debug, Clone, Default)]
pub struct MockCaptioner {
    pub fail_on: BTreeSet<String>,
}

impl MockCaptioner {
    pub fn failing(images: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            fail_on: images.into_iter().map(Into::into).collect(),
        }
    }
}

impl Captioner for MockCaptioner {
    fn caption(&self, request: &CaptionRequest) -> Result<String, CaptionError> {
        if self.fail_on.contains(&request.image_ref) {
            return Err(CaptionError::Unreachable(format!("mock refuses {}", request.image_ref)));
        }
        Ok(format!("caption:{}", request.image_ref))
    }
}
