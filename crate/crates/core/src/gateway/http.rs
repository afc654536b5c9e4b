//! OpenAI-compatible HTTP backend with exponential-backoff retries.

use std::collections::hash_map::RandomState;
use std::hash::BuildHasher;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{ChatBackend, CompletionRequest, GatewayError, WireRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub base_delay_ms: u64,
    pub factor: f64,
    pub max_delay_ms: u64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_delay_ms: 1000,
            factor: 2.0,
            max_delay_ms: 60_000,
            jitter: false,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self.factor.powi(attempt.saturating_sub(1).min(30) as i32);
        let mut ms = ((self.base_delay_ms as f64) * exp).min(self.max_delay_ms as f64) as u64;
        if self.jitter && ms > 0 {
            // Up to +50%.
            ms += RandomState::new().hash_one(attempt) % (ms / 2 + 1);
        }
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub timeout_secs: u64,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub retry: RetryPolicy,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            timeout_secs: 60,
            api_key_env: "OPENAI_API_KEY".into(),
            retry: RetryPolicy::default(),
        }
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(GatewayError),
}

impl HttpBackend {
    pub fn new(config: &HttpConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            warn!(var = %config.api_key_env, "no API key set; sending unauthenticated requests");
        }
        Ok(Self {
            client,
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key,
            retry: config.retry.clone(),
        })
    }

    /// Overrides the key read from the environment.
    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn attempt(&self, body: &WireRequest<'_>) -> Attempt {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("transport: {e}")),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(format!("status {status}: {text}"));
        }
        if !status.is_success() {
            if text.contains("context_length_exceeded") || text.contains("maximum context length") {
                return Attempt::Fatal(GatewayError::PromptTooLong(text));
            }
            return Attempt::Fatal(GatewayError::Rejected {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: WireResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => return Attempt::Fatal(GatewayError::MalformedResponse(e.to_string())),
        };
        match parsed.choices.into_iter().next().and_then(|c| c.message.content) {
            Some(content) => Attempt::Done(content),
            None => Attempt::Fatal(GatewayError::MalformedResponse("no choices[0].message.content".into())),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let body = WireRequest::from(request);
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.attempt(&body) {
                Attempt::Done(content) => return Ok(content),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(reason) => {
                    if attempt > request.max_retries {
                        return Err(GatewayError::Unavailable {
                            attempts: attempt,
                            last_error: reason,
                        });
                    }
                    let delay = self.retry.delay(attempt);
                    debug!(attempt, ?delay, %reason, "retrying completion");
                    std::thread::sleep(delay);
                }
            }
        }
    }
}
