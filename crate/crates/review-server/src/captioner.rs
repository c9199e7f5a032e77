use std::thread;
use std::time::Duration;

use embodia_core::review::{CaptionError, CaptionRequest, Captioner};
use serde::Deserialize;

/// Captioning service reached with one JSON POST per image.
#[derive(Debug, Clone)]
pub struct HttpCaptioner {
    url: String,
    agent: ureq::Agent,
    retries: u32,
    backoff: Duration,
}

#[derive(Deserialize)]
struct CaptionResponse {
    caption: String,
}

impl HttpCaptioner {
    pub fn new(url: impl Into<String>, timeout: Duration, retries: u32) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
            retries,
            backoff: Duration::from_millis(100),
        }
    }

    fn once(&self, request: &CaptionRequest) -> Result<String, CaptionError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(request)
            .map_err(|e| CaptionError::Unreachable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(CaptionError::Unreachable(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(CaptionError::Malformed(format!("status {status}")));
        }
        let body: CaptionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| CaptionError::Malformed(e.to_string()))?;
        if body.caption.trim().is_empty() {
            return Err(CaptionError::Malformed("empty caption".into()));
        }
        Ok(body.caption)
    }
}

impl Captioner for HttpCaptioner {
    /// Retries only when the service could not be reached.
    fn caption(&self, request: &CaptionRequest) -> Result<String, CaptionError> {
        let mut attempt = 0;
        loop {
            match self.once(request) {
                Err(CaptionError::Unreachable(_)) if attempt < self.retries => {
                    attempt += 1;
                    thread::sleep(self.backoff * attempt);
                }
                other => return other,
            }
        }
    }
}
