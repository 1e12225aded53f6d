//! Domain records shared by every stage of the pipeline.
//!
//! Every type here serializes to the flat JSON record used on disk, one
//! record per line.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Instruction sent to the rewriter when none is configured.
pub const DEFAULT_REWRITE_PROMPT: &str = "Revise this text.";

/// Hex SHA-256 of a string's UTF-8 bytes.
pub fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Human,
    Machine,
    Unknown,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Human => "human",
            Label::Machine => "machine",
            Label::Unknown => "unknown",
        }
    }

    pub fn is_known(self) -> bool {
        self != Label::Unknown
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "human" => Ok(Label::Human),
            "machine" => Ok(Label::Machine),
            "unknown" => Ok(Label::Unknown),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

// Corpus files spell Unknown as null.
impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Label::Unknown => s.serialize_none(),
            known => s.serialize_str(known.as_str()),
        }
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match Option::<String>::deserialize(d)? {
            None => Ok(Label::Unknown),
            Some(s) => match s.as_str() {
                "human" => Ok(Label::Human),
                "machine" => Ok(Label::Machine),
                other => Err(serde::de::Error::custom(format!(
                    "label must be \"human\", \"machine\" or null, got {other:?}"
                ))),
            },
        }
    }
}

/// One document under analysis.
///
/// Two samples compare equal when their ids and content digests match;
/// language and source are informational only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextSample {
    pub id: String,
    #[serde(rename = "text")]
    pub content: String,
    #[serde(default = "unknown_label")]
    pub label: Label,
    #[serde(rename = "lang", default)]
    pub language: String,
    #[serde(default)]
    pub source: String,
}

fn unknown_label() -> Label {
    Label::Unknown
}

impl TextSample {
    pub fn new(id: impl Into<String>, content: impl Into<String>, label: Label) -> Self {
        Self {
            id: id.into(),
            content: content.into(),
            label,
            language: String::new(),
            source: String::new(),
        }
    }

    pub fn with_language(mut self, language: impl Into<String>) -> Self {
        self.language = language.into();
        self
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn content_digest(&self) -> String {
        text_digest(&self.content)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidConfig("sample id is empty".into()));
        }
        if self.content.trim().is_empty() {
            return Err(Error::InvalidText);
        }
        Ok(())
    }
}

impl PartialEq for TextSample {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.content_digest() == other.content_digest()
    }
}

impl Eq for TextSample {}

/// Decoding parameters passed to a rewrite or generation backend.
///
/// Stored verbatim in bundles because they are part of every cache key.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    /// `None` leaves the provider default in place.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenerationParams {
    /// Stable digest of the parameter set, used in cache keys.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("params serialize");
        text_digest(&canonical)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rewrite {
    pub index: usize,
    pub text: String,
}

/// The k independent rewrites of one sample, with the provenance needed to
/// regenerate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteBundle {
    pub sample_id: String,
    pub rewriter_id: String,
    pub prompt: String,
    pub params: GenerationParams,
    pub rewrites: Vec<Rewrite>,
}

impl RewriteBundle {
    pub fn k(&self) -> usize {
        self.rewrites.len()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.rewrites.iter().map(|r| r.text.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        if self.rewrites.is_empty() {
            return Err(Error::EmptyRewrites);
        }
        for (pos, rw) in self.rewrites.iter().enumerate() {
            if rw.index != pos + 1 {
                return Err(Error::InvalidConfig(format!(
                    "rewrite indices must be 1..k contiguous, found {} at position {}",
                    rw.index,
                    pos + 1
                )));
            }
            if rw.text.trim().is_empty() {
                return Err(Error::EmptyRewrite {
                    index: rw.index,
                    attempts: 0,
                });
            }
        }
        Ok(())
    }
}

/// Per-token natural-log probabilities returned by a scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProbs {
    pub scorer_id: String,
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
    /// Leading tokens the provider gave no conditional probability for.
    /// They are not part of `tokens`/`logprobs`.
    #[serde(default)]
    pub skipped_prefix: usize,
}

impl TokenLogProbs {
    pub fn len(&self) -> usize {
        self.logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprobs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() != self.logprobs.len() {
            return Err(Error::InvalidConfig(format!(
                "{} tokens but {} logprobs",
                self.tokens.len(),
                self.logprobs.len()
            )));
        }
        if let Some(bad) = self.logprobs.iter().find(|lp| !lp.is_finite() || **lp > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "logprob {bad} is not a finite value <= 0"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Base,
    Expansion,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "base" => Ok(Variant::Base),
            "expansion" => Ok(Variant::Expansion),
            other => Err(format!("variant must be base or expansion, got {other:?}")),
        }
    }
}

/// Everything computed for one sample: the original and rewrite
/// log-perplexities, the deviation statistics and the final scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaryBalanceScore {
    pub sample_id: String,
    pub log_ppl_0: f64,
    pub rewrite_log_ppls: Vec<f64>,
    pub msd: f64,
    pub sign: i8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_e: Option<f64>,
    pub variant: Variant,
}

impl VaryBalanceScore {
    /// The score selected by `variant`.
    pub fn primary_score(&self) -> f64 {
        match (self.variant, self.score_e) {
            (Variant::Expansion, Some(e)) => e,
            _ => self.score,
        }
    }
}
