//! Rewriter and generator backed by an OpenAI-compatible
//! `/chat/completions` endpoint.
//!
//! A rewrite is a single user message, the instruction followed by a blank
//! line and the text; there is no system message. When a seed is
//! configured, rewrite `i` is sent with `seed + i - 1` so that seeded
//! backends do not return k copies of the same rewrite.

use serde_json::{json, Map, Value};

use super::{GenerationProvider, RewriteProvider};
use crate::error::ProviderError;
use crate::http::{JsonClient, RemoteSettings};
use crate::limiter::InflightLimiter;
use crate::types::GenerationParams;

pub const CHAT_PROVIDER: &str = "openai-chat";

pub struct ChatClient {
    client: JsonClient,
}

impl ChatClient {
    pub fn new(settings: RemoteSettings, limiter: InflightLimiter) -> Self {
        Self {
            client: JsonClient::new(settings, CHAT_PROVIDER, limiter),
        }
    }

    pub(crate) fn request_body(&self, content: &str, params: &GenerationParams, seed_offset: u64) -> Value {
        let mut body = Map::new();
        body.insert("model".into(), json!(self.client.settings().model));
        body.insert("messages".into(), json!([{ "role": "user", "content": content }]));
        if let Some(t) = params.temperature {
            body.insert("temperature".into(), json!(t));
        }
        if let Some(m) = params.max_tokens {
            body.insert("max_tokens".into(), json!(m));
        }
        if let Some(s) = params.seed {
            body.insert("seed".into(), json!(s.wrapping_add(seed_offset)));
        }
        Value::Object(body)
    }

    fn complete(&self, body: &Value) -> Result<String, ProviderError> {
        let resp = self.client.post("chat/completions", body)?;
        parse_chat_content(CHAT_PROVIDER, &resp)
    }
}

pub(crate) fn parse_chat_content(provider: &str, resp: &Value) -> Result<String, ProviderError> {
    resp.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ProviderError::new(provider, "response has no choices[0].message.content"))
}

pub(crate) fn rewrite_message(prompt: &str, text: &str) -> String {
    format!("{prompt}\n\n{text}")
}

impl RewriteProvider for ChatClient {
    fn provider_id(&self) -> &str {
        CHAT_PROVIDER
    }

    fn model_id(&self) -> &str {
        &self.client.settings().model
    }

    fn rewrite(
        &self,
        text: &str,
        prompt: &str,
        params: &GenerationParams,
        index: usize,
    ) -> Result<String, ProviderError> {
        let body = self.request_body(&rewrite_message(prompt, text), params, index.saturating_sub(1) as u64);
        self.complete(&body)
    }
}

impl GenerationProvider for ChatClient {
    fn provider_id(&self) -> &str {
        CHAT_PROVIDER
    }

    fn model_id(&self) -> &str {
        &self.client.settings().model
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, ProviderError> {
        self.complete(&self.request_body(prompt, params, 0))
    }
}
