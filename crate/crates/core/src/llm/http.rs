//! Chat-completion client over HTTP.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::client::{ChatRequest, LlmClient, LlmError, LlmResponse};
use crate::embed::InflightGate;

pub const ENDPOINT_ENV: &str = "METAFORGE_LLM_ENDPOINT";
pub const KEY_ENV: &str = "METAFORGE_LLM_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpLlmConfig {
    pub endpoint: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_attempts() -> u32 {
    4
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_in_flight() -> usize {
    4
}
fn default_timeout() -> u64 {
    120
}

impl HttpLlmConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            max_attempts: default_attempts(),
            backoff_ms: default_backoff_ms(),
            max_in_flight: default_in_flight(),
            timeout_secs: default_timeout(),
        }
    }

    /// Endpoint and key from the environment; `None` without an endpoint.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty())?;
        let mut c = Self::new(endpoint);
        c.api_key = std::env::var(KEY_ENV).ok().filter(|s| !s.is_empty());
        Some(c)
    }
}

pub struct HttpLlmClient {
    config: HttpLlmConfig,
    agent: ureq::Agent,
    gate: InflightGate,
}

enum Failure {
    Retryable(String),
    Fatal(LlmError),
}

impl HttpLlmClient {
    pub fn new(config: HttpLlmConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = InflightGate::new(config.max_in_flight);
        Self { config, agent, gate }
    }

    fn post_once(&self, body: &Value) -> Result<LlmResponse, Failure> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        if status >= 400 {
            return Err(Failure::Fatal(LlmError::Status { status, body: text }));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| Failure::Fatal(LlmError::Decode(e.to_string())))?;
        LlmResponse::from_wire(&v).map_err(Failure::Fatal)
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, request: &ChatRequest) -> Result<LlmResponse, LlmError> {
        let body = request.to_wire();
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.gate.run(|| self.post_once(&body)) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    log::warn!("LLM request attempt {attempt}/{attempts} failed: {msg}");
                    last = msg;
                    if attempt < attempts {
                        thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1).min(16)));
                    }
                }
            }
        }
        Err(LlmError::Transport { attempts, message: last })
    }

    fn tag(&self) -> String {
        "http".to_owned()
    }
}
