//! Scorer backed by an OpenAI-compatible `/completions` endpoint.
//!
//! Request: `{"model", "prompt": <text>, "max_tokens": 0, "echo": true,
//! "logprobs": 0, "temperature": 0}`. The prompt's own tokens come back in
//! `choices[0].logprobs.tokens` / `token_logprobs`; the first entry is
//! usually `null` and is counted as a skipped prefix. If the server
//! generates anyway, tokens whose `text_offset` falls past the prompt are
//! dropped.

use serde_json::{json, Value};

use super::ScorerProvider;
use crate::error::ProviderError;
use crate::http::{JsonClient, RemoteSettings};
use crate::limiter::InflightLimiter;
use crate::types::{text_digest, TokenLogProbs};

pub const COMPLETIONS_PROVIDER: &str = "openai-completions";

pub struct CompletionsScorer {
    client: JsonClient,
}

impl CompletionsScorer {
    pub fn new(settings: RemoteSettings, limiter: InflightLimiter) -> Self {
        Self {
            client: JsonClient::new(settings, COMPLETIONS_PROVIDER, limiter),
        }
    }

    pub(crate) fn request_body(&self, text: &str) -> Value {
        json!({
            "model": self.client.settings().model,
            "prompt": text,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0,
        })
    }
}

/// Extracts prompt-token log-probabilities from a completions response.
pub(crate) fn parse_echo_logprobs(scorer_id: &str, text: &str, body: &Value) -> Result<TokenLogProbs, ProviderError> {
    let err = |m: &str| ProviderError::new(scorer_id, m.to_string());
    let lp = body
        .pointer("/choices/0/logprobs")
        .ok_or_else(|| err("response has no choices[0].logprobs"))?;
    let tokens = lp
        .get("tokens")
        .and_then(Value::as_array)
        .ok_or_else(|| err("logprobs.tokens missing"))?;
    let values = lp
        .get("token_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| err("logprobs.token_logprobs missing"))?;
    if tokens.len() != values.len() {
        return Err(err("tokens and token_logprobs differ in length"));
    }
    let offsets = lp.get("text_offset").and_then(Value::as_array);
    let prompt_len = match offsets {
        Some(offs) => offs
            .iter()
            .take_while(|o| o.as_u64().is_some_and(|o| (o as usize) < text.len()))
            .count(),
        None => tokens.len(),
    };

    let mut out = TokenLogProbs {
        scorer_id: scorer_id.to_string(),
        tokens: Vec::with_capacity(prompt_len),
        logprobs: Vec::with_capacity(prompt_len),
        skipped_prefix: 0,
    };
    for (tok, val) in tokens.iter().zip(values).take(prompt_len) {
        let tok = tok.as_str().ok_or_else(|| err("non-string token"))?;
        match val.as_f64() {
            None if val.is_null() && out.logprobs.is_empty() => out.skipped_prefix += 1,
            None => return Err(err("null or non-numeric logprob after the first scored token")),
            // tiny positive values are rounding noise from the server
            Some(v) if v > 0.0 && v < 1e-6 => {
                out.tokens.push(tok.to_string());
                out.logprobs.push(0.0);
            }
            Some(v) if v.is_finite() && v <= 0.0 => {
                out.tokens.push(tok.to_string());
                out.logprobs.push(v);
            }
            Some(v) => return Err(err(&format!("invalid logprob {v}"))),
        }
    }
    Ok(out)
}

impl ScorerProvider for CompletionsScorer {
    fn provider_id(&self) -> &str {
        COMPLETIONS_PROVIDER
    }

    fn model_id(&self) -> &str {
        &self.client.settings().model
    }

    fn params_digest(&self) -> String {
        text_digest("echo=true;logprobs=0;max_tokens=0;temperature=0")
    }

    fn token_logprobs(&self, text: &str) -> Result<TokenLogProbs, ProviderError> {
        let body = self.client.post("completions", &self.request_body(text))?;
        parse_echo_logprobs(&self.scorer_id(), text, &body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leading_null_skipped() {
        let body = json!({"choices": [{"logprobs": {
            "tokens": ["Hello", " world", "!"],
            "token_logprobs": [null, -1.5, -0.25],
            "text_offset": [0, 5, 11]
        }}]});
        let t = parse_echo_logprobs("s", "Hello world!", &body).unwrap();
        assert_eq!(t.skipped_prefix, 1);
        assert_eq!(t.tokens, vec![" world", "!"]);
        assert_eq!(t.logprobs, vec![-1.5, -0.25]);
    }

    #[test]
    fn generated_tail_trimmed_by_offset() {
        let body = json!({"choices": [{"logprobs": {
            "tokens": ["a", " b", " c"],
            "token_logprobs": [null, -1.0, -2.0],
            "text_offset": [0, 1, 3]
        }}]});
        let t = parse_echo_logprobs("s", "a b", &body).unwrap();
        assert_eq!(t.logprobs, vec![-1.0]);
    }

    #[test]
    fn interior_null_rejected() {
        let body = json!({"choices": [{"logprobs": {
            "tokens": ["a", "b", "c"],
            "token_logprobs": [-1.0, null, -2.0]
        }}]});
        assert!(parse_echo_logprobs("s", "abc", &body).is_err());
    }

    #[test]
    fn missing_logprobs_is_protocol_error() {
        let body = json!({"choices": [{"text": "x"}]});
        let e = parse_echo_logprobs("s", "abc", &body).unwrap_err();
        assert!(e.message.contains("logprobs"));
    }
}
