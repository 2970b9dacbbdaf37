//! HTTP+JSON adapter client: `POST {base}/process` with a
//! [`ComponentRequest`] body, answered by a [`ComponentResult`]-shaped body
//! (only `candidates` is read).

use std::time::Duration;

use serde::Deserialize;

use super::{Adapter, AdapterError, Candidate, ComponentRequest};

#[derive(Debug, Clone)]
pub struct RemoteAdapter {
    endpoint: String,
}

#[derive(Deserialize)]
struct RemoteReply {
    candidates: Vec<Candidate>,
}

impl RemoteAdapter {
    /// `url` may be the service base or the full `/process` endpoint.
    pub fn new(url: &str) -> Self {
        let trimmed = url.trim_end_matches('/');
        let endpoint =
            if trimmed.ends_with("/process") { trimmed.to_string() } else { format!("{trimmed}/process") };
        Self { endpoint }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Adapter for RemoteAdapter {
    fn process(&self, request: &ComponentRequest, timeout: Duration) -> Result<Vec<Candidate>, AdapterError> {
        // Built per call on the registry's worker thread; a blocking client
        // must not be created or dropped inside an async runtime.
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout.max(Duration::from_millis(1)))
            .build()
            .map_err(|e| AdapterError::Failed(e.to_string()))?;
        let response = client.post(&self.endpoint).json(request).send().map_err(|e| {
            if e.is_timeout() {
                AdapterError::Timeout { adapter: self.endpoint.clone(), timeout_ms: timeout.as_millis() as u64 }
            } else if e.is_connect() {
                AdapterError::AdapterUnavailable(format!("{}: {e}", self.endpoint))
            } else {
                AdapterError::Failed(e.to_string())
            }
        })?;
        let status = response.status();
        if status == reqwest::StatusCode::SERVICE_UNAVAILABLE {
            return Err(AdapterError::AdapterUnavailable(format!("{} answered 503", self.endpoint)));
        }
        if status == reqwest::StatusCode::UNPROCESSABLE_ENTITY || status == reqwest::StatusCode::BAD_REQUEST {
            let body = response.text().unwrap_or_default();
            return Err(AdapterError::BadPayload(body));
        }
        if !status.is_success() {
            return Err(AdapterError::Failed(format!("{} answered {status}", self.endpoint)));
        }
        let reply: RemoteReply = response.json().map_err(|e| AdapterError::BadResult(e.to_string()))?;
        Ok(reply.candidates)
    }
}
