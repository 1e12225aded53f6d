//! Detector configuration and provider construction.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::RemoteSettings;
use crate::limiter::InflightLimiter;
use crate::rewriter::{ChatClient, GenerationProvider, IdentityRewriter, MockRewriter, RewriteProvider};
use crate::scorer::{CompletionsScorer, NGramModel, ScorerProvider, TableScorer, DEFAULT_MIN_TOKENS};
use crate::types::{GenerationParams, Variant, DEFAULT_REWRITE_PROMPT};

pub const DEFAULT_N_REWRITES: usize = 3;
pub const DEFAULT_RHO_CAP: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RewriterSettings {
    Mock,
    Identity,
    OpenaiChat(RemoteSettings),
}

impl RewriterSettings {
    pub fn build(&self, limiter: &InflightLimiter) -> Arc<dyn RewriteProvider> {
        match self {
            RewriterSettings::Mock => Arc::new(MockRewriter::default()),
            RewriterSettings::Identity => Arc::new(IdentityRewriter::default()),
            RewriterSettings::OpenaiChat(s) => Arc::new(ChatClient::new(s.clone(), limiter.clone())),
        }
    }

    /// Generation client for producing fresh machine answers.
    pub fn build_generator(&self, limiter: &InflightLimiter) -> Result<Arc<dyn GenerationProvider>> {
        match self {
            RewriterSettings::Mock => Ok(Arc::new(MockRewriter::default())),
            RewriterSettings::Identity => Err(Error::InvalidConfig(
                "the identity rewriter cannot generate answers".into(),
            )),
            RewriterSettings::OpenaiChat(s) => Ok(Arc::new(ChatClient::new(s.clone(), limiter.clone()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScorerSettings {
    /// Fitted n-gram model file.
    Ngram {
        model: PathBuf,
    },
    /// Planted log-perplexity table (JSON lines of `text_digest`, `log_ppl`).
    Table {
        path: PathBuf,
    },
    OpenaiCompletions(RemoteSettings),
}

impl ScorerSettings {
    pub fn build(&self, limiter: &InflightLimiter) -> Result<Arc<dyn ScorerProvider>> {
        Ok(match self {
            ScorerSettings::Ngram { model } => Arc::new(NGramModel::load(model)?),
            ScorerSettings::Table { path } => Arc::new(TableScorer::load(path)?),
            ScorerSettings::OpenaiCompletions(s) => Arc::new(CompletionsScorer::new(s.clone(), limiter.clone())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSettings {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

impl Default for CacheSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            dir: None,
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub n_rewrites: usize,
    pub variant: Variant,
    pub rho_cap: f64,
    pub min_tokens: usize,
    /// Decision threshold on the selected score; `None` means calibrate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub prompt: String,
    pub params: GenerationParams,
    pub empty_retries: u32,
    pub max_inflight: usize,
    pub rewriter: RewriterSettings,
    pub scorer: Option<ScorerSettings>,
    pub cache: CacheSettings,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            n_rewrites: DEFAULT_N_REWRITES,
            variant: Variant::Base,
            rho_cap: DEFAULT_RHO_CAP,
            min_tokens: DEFAULT_MIN_TOKENS,
            threshold: None,
            prompt: DEFAULT_REWRITE_PROMPT.to_string(),
            params: GenerationParams::default(),
            empty_retries: 2,
            max_inflight: 8,
            rewriter: RewriterSettings::Mock,
            scorer: None,
            cache: CacheSettings::default(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_rewrites < 1 {
            return bad("n_rewrites must be >= 1".into());
        }
        if self.variant == Variant::Expansion && self.n_rewrites < 2 {
            return bad(format!(
                "the expansion variant needs n_rewrites >= 2, got {}",
                self.n_rewrites
            ));
        }
        if !(self.rho_cap.is_finite() && self.rho_cap > 0.0) {
            return bad(format!("rho_cap must be finite and > 0, got {}", self.rho_cap));
        }
        if self.min_tokens < 1 {
            return bad("min_tokens must be >= 1".into());
        }
        if self.threshold.is_some_and(|t| !t.is_finite()) {
            return bad("threshold must be finite".into());
        }
        if self.max_inflight < 1 {
            return bad("max_inflight must be >= 1".into());
        }
        if self.params.temperature.is_some_and(|t| !(t.is_finite() && t >= 0.0)) {
            return bad("temperature must be finite and >= 0".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = DetectorConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_rewrites, 3);
        assert_eq!(cfg.rho_cap, 1000.0);
        assert_eq!(cfg.min_tokens, 8);
        assert_eq!(cfg.prompt, "Revise this text.");
    }

    #[test]
    fn expansion_needs_two_rewrites() {
        let cfg = DetectorConfig {
            variant: Variant::Expansion,
            n_rewrites: 1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn bounds_checked() {
        for cfg in [
            DetectorConfig {
                rho_cap: 0.0,
                ..Default::default()
            },
            DetectorConfig {
                rho_cap: f64::INFINITY,
                ..Default::default()
            },
            DetectorConfig {
                min_tokens: 0,
                ..Default::default()
            },
            DetectorConfig {
                n_rewrites: 0,
                ..Default::default()
            },
            DetectorConfig {
                threshold: Some(f64::NAN),
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn settings_serde_shape() {
        let s: RewriterSettings =
            serde_json::from_str(r#"{"kind":"openai-chat","base_url":"https://api.example/v1","model":"m"}"#).unwrap();
        match s {
            RewriterSettings::OpenaiChat(r) => {
                assert_eq!(r.api_key_env, "OPENAI_API_KEY");
                assert_eq!(r.max_retries, 4);
            }
            other => panic!("{other:?}"),
        }
        let s: ScorerSettings = serde_json::from_str(r#"{"kind":"ngram","model":"m.json"}"#).unwrap();
        assert_eq!(s, ScorerSettings::Ngram { model: "m.json".into() });
    }
}
