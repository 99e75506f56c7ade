//! JSON-over-HTTP backend: one POST per call to the backend's endpoint.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use ureq::Agent;

use super::{Backend, GatewayError, ModelRequest, ModelResponse};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

static NETWORK_CALLS: AtomicU64 = AtomicU64::new(0);

/// Number of HTTP requests attempted by this process so far.
pub fn network_calls() -> u64 {
    NETWORK_CALLS.load(Ordering::SeqCst)
}

pub struct HttpBackend {
    name: String,
    endpoint: String,
    agent: Agent,
}

impl HttpBackend {
    pub fn new(name: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self::with_timeout(name, endpoint, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(
        name: impl Into<String>,
        endpoint: impl Into<String>,
        timeout: Duration,
    ) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            name: name.into(),
            endpoint: endpoint.into(),
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn call(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        NETWORK_CALLS.fetch_add(1, Ordering::SeqCst);
        let unavailable = |reason: String| GatewayError::Unavailable {
            backend: self.name.clone(),
            reason,
        };
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(request)
            .map_err(|e| unavailable(e.to_string()))?;
        response
            .body_mut()
            .read_json::<ModelResponse>()
            .map_err(|e| GatewayError::InvalidResponse {
                backend: self.name.clone(),
                reason: e.to_string(),
            })
    }
}
