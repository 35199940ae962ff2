//! Minimal blocking JSON-over-HTTP plumbing for the remote providers.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use ureq::Agent;

use crate::retry::Attempt;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum HttpFailure {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Decode(String),
}

impl HttpFailure {
    /// Transport problems, throttling and server errors are worth retrying.
    pub fn classify(self) -> Attempt<HttpFailure> {
        match &self {
            HttpFailure::Transport(_) => Attempt::Retry(self),
            HttpFailure::Status { status, .. } if *status == 429 || *status >= 500 => {
                Attempt::Retry(self)
            }
            _ => Attempt::Fatal(self),
        }
    }
}

pub fn agent(timeout: Duration) -> Agent {
    Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

pub fn post_json<B: Serialize, R: DeserializeOwned>(
    agent: &Agent,
    url: &str,
    bearer: Option<&str>,
    body: &B,
) -> Result<R, HttpFailure> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(token) = bearer.filter(|t| !t.is_empty()) {
        req = req.header("Authorization", format!("Bearer {token}"));
    }
    let mut resp = req
        .send_json(body)
        .map_err(|e| HttpFailure::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    if !(200..300).contains(&status) {
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        return Err(HttpFailure::Status { status, body });
    }
    resp.body_mut()
        .read_json::<R>()
        .map_err(|e| HttpFailure::Decode(e.to_string()))
}

pub fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}
