//! Add-k smoothed n-gram model (orders 1 to 3), used as a deterministic
//! offline scorer.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScorerProvider;
use crate::error::{Error, ProviderError, Result};
use crate::types::{text_digest, TokenLogProbs};

pub const NGRAM_FORMAT_VERSION: u32 = 1;

const BOS: &str = "<s>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    Whitespace,
    Character,
}

impl TokenizerMode {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            TokenizerMode::Whitespace => text.split_whitespace().map(str::to_string).collect(),
            TokenizerMode::Character => text.chars().map(String::from).collect(),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            TokenizerMode::Whitespace => "ws",
            TokenizerMode::Character => "char",
        }
    }
}

impl std::str::FromStr for TokenizerMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "whitespace" | "ws" => Ok(TokenizerMode::Whitespace),
            "character" | "char" => Ok(TokenizerMode::Character),
            other => Err(format!("unknown tokenizer mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<String, u64>,
}

#[derive(Serialize, Deserialize)]
struct ContextEntry {
    context: Vec<String>,
    total: u64,
    next: BTreeMap<String, u64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    order: usize,
    smoothing: f64,
    tokenizer: TokenizerMode,
    total_tokens: u64,
    vocabulary: BTreeMap<String, u64>,
    contexts: Vec<ContextEntry>,
}

/// Fitted model. Immutable once built.
///
/// `P(w | ctx) = (c(ctx, w) + k) / (c(ctx) + k |V|)` where `|V|` is the
/// number of distinct training tokens; for order 1 the context is empty and
/// `c(ctx)` is the total token count. Contexts at the start of a text are
/// padded with a begin marker so every token gets a probability.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    smoothing: f64,
    tokenizer: TokenizerMode,
    total_tokens: u64,
    vocabulary: BTreeMap<String, u64>,
    contexts: BTreeMap<Vec<String>, ContextCounts>,
    model_id: String,
}

pub fn fit_ngram<S: AsRef<str>>(
    corpus: &[S],
    order: usize,
    smoothing: f64,
    tokenizer: TokenizerMode,
) -> Result<NGramModel> {
    if !(1..=3).contains(&order) {
        return Err(Error::InvalidConfig(format!(
            "n-gram order must be 1, 2 or 3, got {order}"
        )));
    }
    if !(smoothing.is_finite() && smoothing > 0.0) {
        return Err(Error::InvalidConfig(format!("smoothing must be > 0, got {smoothing}")));
    }
    let mut vocabulary = BTreeMap::<String, u64>::new();
    let mut contexts = BTreeMap::<Vec<String>, ContextCounts>::new();
    let mut total_tokens = 0u64;
    for text in corpus {
        let tokens = tokenizer.tokenize(text.as_ref());
        let mut history: Vec<String> = vec![BOS.to_string(); order - 1];
        for tok in tokens {
            *vocabulary.entry(tok.clone()).or_default() += 1;
            total_tokens += 1;
            if order > 1 {
                let ctx = history[history.len() - (order - 1)..].to_vec();
                let slot = contexts.entry(ctx).or_default();
                slot.total += 1;
                *slot.next.entry(tok.clone()).or_default() += 1;
            }
            history.push(tok);
        }
    }
    if total_tokens == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(NGramModel::assemble(
        order,
        smoothing,
        tokenizer,
        total_tokens,
        vocabulary,
        contexts,
    ))
}

impl NGramModel {
    fn assemble(
        order: usize,
        smoothing: f64,
        tokenizer: TokenizerMode,
        total_tokens: u64,
        vocabulary: BTreeMap<String, u64>,
        contexts: BTreeMap<Vec<String>, ContextCounts>,
    ) -> Self {
        let mut model = Self {
            order,
            smoothing,
            tokenizer,
            total_tokens,
            vocabulary,
            contexts,
            model_id: String::new(),
        };
        let digest = text_digest(&model.to_json());
        model.model_id = format!("{}gram-{}-{}", order, tokenizer.as_str(), &digest[..12]);
        model
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn tokenizer(&self) -> TokenizerMode {
        self.tokenizer
    }

    pub fn vocabulary(&self) -> &BTreeMap<String, u64> {
        &self.vocabulary
    }

    pub fn count(&self, token: &str) -> u64 {
        self.vocabulary.get(token).copied().unwrap_or(0)
    }

    /// Natural-log probability of `token` after `context` (most recent last).
    pub fn logprob(&self, context: &[String], token: &str) -> f64 {
        let k = self.smoothing;
        let v = self.vocabulary.len() as f64;
        let (num, den) = if self.order == 1 {
            (self.count(token) as f64, self.total_tokens as f64)
        } else {
            let ctx = &context[context.len() - (self.order - 1)..];
            match self.contexts.get(ctx) {
                Some(c) => (c.next.get(token).copied().unwrap_or(0) as f64, c.total as f64),
                None => (0.0, 0.0),
            }
        };
        ((num + k) / (den + k * v)).ln().min(0.0)
    }

    /// Scores every token of `text`, padding the history with begin markers.
    pub fn score_text(&self, text: &str) -> TokenLogProbs {
        let tokens = self.tokenizer.tokenize(text);
        let mut history: Vec<String> = vec![BOS.to_string(); self.order.saturating_sub(1)];
        let mut logprobs = Vec::with_capacity(tokens.len());
        for tok in &tokens {
            logprobs.push(self.logprob(&history, tok));
            history.push(tok.clone());
        }
        TokenLogProbs {
            scorer_id: self.scorer_id(),
            tokens,
            logprobs,
            skipped_prefix: 0,
        }
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format_version: NGRAM_FORMAT_VERSION,
            order: self.order,
            smoothing: self.smoothing,
            tokenizer: self.tokenizer,
            total_tokens: self.total_tokens,
            vocabulary: self.vocabulary.clone(),
            contexts: self
                .contexts
                .iter()
                .map(|(ctx, c)| ContextEntry {
                    context: ctx.clone(),
                    total: c.total,
                    next: c.next.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(json).map_err(|e| Error::InvalidModel(e.to_string()))?;
        if file.format_version != NGRAM_FORMAT_VERSION {
            return Err(Error::InvalidModel(format!(
                "format version {} not supported (expected {NGRAM_FORMAT_VERSION})",
                file.format_version
            )));
        }
        if !(1..=3).contains(&file.order) || !(file.smoothing.is_finite() && file.smoothing > 0.0) {
            return Err(Error::InvalidModel("order or smoothing out of range".into()));
        }
        let contexts = file
            .contexts
            .into_iter()
            .map(|e| {
                (
                    e.context,
                    ContextCounts {
                        total: e.total,
                        next: e.next,
                    },
                )
            })
            .collect();
        Ok(Self::assemble(
            file.order,
            file.smoothing,
            file.tokenizer,
            file.total_tokens,
            file.vocabulary,
            contexts,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl ScorerProvider for NGramModel {
    fn provider_id(&self) -> &str {
        "ngram"
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn token_logprobs(&self, text: &str) -> Result<TokenLogProbs, ProviderError> {
        Ok(self.score_text(text))
    }
}
