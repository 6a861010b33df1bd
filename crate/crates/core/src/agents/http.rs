use std::time::Duration;

use serde::Serialize;

use super::{AgentBackend, AgentRequest, BackendError};
use crate::label::DmrsLabel;

#[derive(Serialize)]
struct WireRequest<'a> {
    role: &'static str,
    class: Option<DmrsLabel>,
    payload: &'a str,
    sample_id: usize,
    candidates: &'a [DmrsLabel],
}

/// Remote agents behind `POST {base}/agent`.
///
/// The body is `{"role", "class", "payload", "sample_id", "candidates"}`;
/// the response body is returned verbatim for role-specific parsing.
pub struct HttpBackend {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        HttpBackend {
            endpoint: format!("{}/agent", base_url.trim_end_matches('/')),
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl AgentBackend for HttpBackend {
    fn call(&self, request: &AgentRequest, _attempt: u32) -> Result<String, BackendError> {
        let body = WireRequest {
            role: request.role.name(),
            class: request.role.class(),
            payload: &request.payload.text,
            sample_id: request.sample_id,
            candidates: &request.candidates,
        };
        self.agent
            .post(&self.endpoint)
            .send_json(&body)
            .and_then(|mut r| r.body_mut().read_to_string())
            .map_err(|e| BackendError::Transport(e.to_string()))
    }
}
