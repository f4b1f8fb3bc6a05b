//! Chat endpoints: the HTTP client and a recording wrapper.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::fixture::FixtureWriter;
use crate::grammar::DEFAULT_SLEEP_CAP_S;
use crate::wire::{ChatRequest, ChatResponse};

#[derive(Debug, thiserror::Error)]
pub enum EndpointError {
    #[error("invalid endpoint config: {0}")]
    Config(String),
    #[error("environment variable `{0}` holding the endpoint token is not set")]
    MissingToken(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("cannot decode endpoint response: {0}")]
    Decode(String),
    #[error("cannot record exchange: {0}")]
    Record(String),
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    2
}
fn default_invalid_retries() -> u32 {
    3
}
fn default_in_flight() -> usize {
    4
}
fn default_cap() -> f64 {
    DEFAULT_SLEEP_CAP_S
}

/// Everything needed to talk to one chat endpoint. This is the `params`
/// object of an `llm` policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    /// Requests go to `<base_url>/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. No
    /// `Authorization` header is sent when absent.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    /// Transport retries per request.
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Consecutive unparseable actions tolerated before the episode aborts.
    #[serde(default = "default_invalid_retries")]
    pub max_invalid_actions: u32,
    /// Overrides the clock's move budget when set.
    #[serde(default)]
    pub max_moves: Option<u32>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_cap")]
    pub sleep_cap_s: f64,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            token_env: None,
            timeout_s: default_timeout(),
            max_retries: default_retries(),
            max_invalid_actions: default_invalid_retries(),
            max_moves: None,
            max_in_flight: default_in_flight(),
            sleep_cap_s: default_cap(),
        }
    }

    pub fn from_params(params: &serde_json::Value) -> Result<Self, EndpointError> {
        let cfg: Self = serde_json::from_value(params.clone()).map_err(|e| EndpointError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EndpointError> {
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(EndpointError::Config(format!("timeout_s must be positive, got {}", self.timeout_s)));
        }
        if self.max_in_flight == 0 {
            return Err(EndpointError::Config("max_in_flight must be at least 1".into()));
        }
        if !(self.sleep_cap_s.is_finite() && self.sleep_cap_s > 0.0) {
            return Err(EndpointError::Config(format!("sleep_cap_s must be positive, got {}", self.sleep_cap_s)));
        }
        if matches!(self.max_moves, Some(n) if n < 2) {
            return Err(EndpointError::Config("max_moves must be at least 2".into()));
        }
        if self.base_url.is_empty() {
            return Err(EndpointError::Config("base_url is empty".into()));
        }
        Ok(())
    }

    pub fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

pub trait ChatEndpoint: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, EndpointError>;
}

impl<E: ChatEndpoint + ?Sized> ChatEndpoint for Arc<E> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, EndpointError> {
        (**self).complete(request)
    }
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.count.lock().expect("in-flight lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("in-flight lock");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpEndpoint {
    agent: ureq::Agent,
    url: String,
    token: Option<String>,
    max_retries: u32,
    in_flight: InFlight,
}

impl HttpEndpoint {
    pub fn new(cfg: &EndpointConfig) -> Result<Self, EndpointError> {
        cfg.validate()?;
        let token = match &cfg.token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| EndpointError::MissingToken(var.clone()))?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            url: cfg.url(),
            token,
            max_retries: cfg.max_retries,
            in_flight: InFlight {
                count: Mutex::new(0),
                freed: Condvar::new(),
                limit: cfg.max_in_flight,
            },
        })
    }

    fn attempt(&self, request: &ChatRequest) -> Result<ChatResponse, Attempt> {
        let mut req = self.agent.post(&self.url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send_json(request).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&body).map_err(|e| Attempt::Fatal(EndpointError::Decode(e.to_string()))),
            429 | 500..=599 => Err(Attempt::Retry(format!("HTTP {status}: {body}"))),
            _ => Err(Attempt::Fatal(EndpointError::Status { status, body })),
        }
    }
}

enum Attempt {
    Retry(String),
    Fatal(EndpointError),
}

impl ChatEndpoint for HttpEndpoint {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, EndpointError> {
        let _permit = self.in_flight.acquire();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(request) {
                Ok(resp) => return Ok(resp),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message)) if attempts > self.max_retries => {
                    return Err(EndpointError::Transport { attempts, message });
                }
                Err(Attempt::Retry(message)) => {
                    log::warn!("request to {} failed (attempt {attempts}): {message}", self.url);
                    std::thread::sleep(Duration::from_millis(200 * 2u64.pow(attempts.min(6))));
                }
            }
        }
    }
}

/// Passes requests through to `inner` and saves every exchange.
pub struct RecordingEndpoint<E> {
    inner: E,
    writer: Mutex<FixtureWriter>,
}

impl<E: ChatEndpoint> RecordingEndpoint<E> {
    pub fn new(inner: E, writer: FixtureWriter) -> Self {
        Self {
            inner,
            writer: Mutex::new(writer),
        }
    }

    /// Writes the manifest and returns the number of exchanges recorded.
    pub fn finish(self) -> Result<usize, EndpointError> {
        let writer = self.writer.into_inner().expect("writer lock");
        writer.finish().map_err(|e| EndpointError::Record(e.to_string()))
    }
}

impl<E: ChatEndpoint> ChatEndpoint for RecordingEndpoint<E> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, EndpointError> {
        let response = self.inner.complete(request)?;
        self.writer
            .lock()
            .expect("writer lock")
            .record(Some(request), &response)
            .map_err(|e| EndpointError::Record(e.to_string()))?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn params_defaults_and_validation() {
        let cfg = EndpointConfig::from_params(&json!({"base_url": "http://h/v1/", "model": "m"})).unwrap();
        assert_eq!(cfg.url(), "http://h/v1/chat/completions");
        assert_eq!(cfg.max_retries, 2);
        assert_eq!(cfg.sleep_cap_s, 600.0);
        assert!(EndpointConfig::from_params(&json!({"base_url": "x", "model": "m", "timeout_s": 0})).is_err());
        assert!(EndpointConfig::from_params(&json!({"base_url": "x", "model": "m", "bogus": 1})).is_err());
        assert!(EndpointConfig::from_params(&json!({"model": "m"})).is_err());
    }

    #[test]
    fn missing_token_variable_is_reported() {
        let mut cfg = EndpointConfig::new("http://127.0.0.1:9", "m");
        cfg.token_env = Some("TEMPALIGN_TEST_TOKEN_THAT_IS_NOT_SET".into());
        match HttpEndpoint::new(&cfg) {
            Err(EndpointError::MissingToken(v)) => assert_eq!(v, "TEMPALIGN_TEST_TOKEN_THAT_IS_NOT_SET"),
            other => panic!("unexpected {:?}", other.err()),
        }
    }

    #[test]
    fn unreachable_endpoint_exhausts_retries() {
        let mut cfg = EndpointConfig::new("http://127.0.0.1:9", "m");
        cfg.max_retries = 1;
        cfg.timeout_s = 2.0;
        let ep = HttpEndpoint::new(&cfg).unwrap();
        let req = ChatRequest::new("m", &Default::default());
        match ep.complete(&req) {
            Err(EndpointError::Transport { attempts, .. }) => assert_eq!(attempts, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
