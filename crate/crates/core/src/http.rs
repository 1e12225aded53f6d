//! Blocking JSON-over-HTTP client shared by the remote providers: bearer
//! auth from an environment variable, exponential backoff on transient
//! failures, and the global in-flight bound.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ProviderError;
use crate::limiter::InflightLimiter;

/// Connection settings for an OpenAI-compatible endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteSettings {
    /// e.g. `https://api.openai.com/v1`
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. The token
    /// itself is never stored in configuration.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    4
}
fn default_backoff() -> u64 {
    500
}

impl RemoteSettings {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: default_key_env(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_ms: default_backoff(),
        }
    }
}

pub(crate) struct JsonClient {
    agent: ureq::Agent,
    settings: RemoteSettings,
    provider: String,
    limiter: InflightLimiter,
}

impl JsonClient {
    pub(crate) fn new(settings: RemoteSettings, provider: &str, limiter: InflightLimiter) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs)))
            .http_status_as_error(false)
            .build();
        Self {
            agent: config.into(),
            settings,
            provider: provider.to_string(),
            limiter,
        }
    }

    pub(crate) fn settings(&self) -> &RemoteSettings {
        &self.settings
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.settings.base_url.trim_end_matches('/'), path)
    }

    fn error(&self, message: impl Into<String>, status: Option<u16>, attempts: u32, retryable: bool) -> ProviderError {
        ProviderError {
            provider: self.provider.clone(),
            message: message.into(),
            status,
            attempts,
            retryable,
        }
    }

    /// POSTs `body` to `path`, retrying on connection failures, 429 and 5xx.
    pub(crate) fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = self.url(path);
        let payload = body.to_string();
        let token = std::env::var(&self.settings.api_key_env).ok();
        let max_attempts = self.settings.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = {
                let _permit = self.limiter.acquire();
                let mut req = self.agent.post(&url).header("Content-Type", "application/json");
                if let Some(token) = token.as_deref() {
                    req = req.header("Authorization", &format!("Bearer {token}"));
                }
                req.send(payload.as_str())
            };
            let err = match outcome {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.into_body().read_to_string().unwrap_or_default();
                    if (200..300).contains(&status) {
                        return serde_json::from_str(&text).map_err(|e| {
                            self.error(format!("malformed response body: {e}"), Some(status), attempt, false)
                        });
                    }
                    let retryable = status == 429 || status >= 500;
                    let snippet: String = text.chars().take(200).collect();
                    self.error(format!("HTTP {status}: {snippet}"), Some(status), attempt, retryable)
                }
                Err(e) => self.error(format!("request to {url} failed: {e}"), None, attempt, true),
            };
            if !err.retryable || attempt >= max_attempts {
                return Err(err);
            }
            let delay = self.settings.backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
            log::warn!("{}; retrying in {delay} ms", err);
            std::thread::sleep(Duration::from_millis(delay));
        }
    }
}
