//! Token log-probabilities and their reduction to log-perplexity.
//!
//! Log-perplexity is the negated mean of the per-token natural-log
//! probabilities, in nats per token. Tokens a provider could not score
//! (typically the first one) are dropped, not floored, and do not count
//! toward the mean.

mod ngram;
mod openai;
mod table;

pub use ngram::{fit_ngram, NGramModel, TokenizerMode, NGRAM_FORMAT_VERSION};
pub use openai::CompletionsScorer;
pub use table::{TableEntry, TableScorer};

use crate::cache::{CacheKey, CacheKind, CacheStore, CachedValue};
use crate::counters::StageCounter;
use crate::error::{Error, ProviderError, Result};
use crate::types::{text_digest, TokenLogProbs};

/// Default floor on the number of scored tokens.
pub const DEFAULT_MIN_TOKENS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScorerCapabilities {
    pub supports_batch: bool,
    /// Longest input in bytes the provider accepts, if bounded.
    pub max_text_len: Option<usize>,
}

/// Source of per-token conditional log-probabilities.
///
/// `provider_id`, `model_id` and `params_digest` must be stable across
/// processes: together they key the score cache.
pub trait ScorerProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn model_id(&self) -> &str;

    fn scorer_id(&self) -> String {
        format!("{}:{}", self.provider_id(), self.model_id())
    }

    fn params_digest(&self) -> String {
        String::new()
    }

    fn capabilities(&self) -> ScorerCapabilities {
        ScorerCapabilities {
            supports_batch: false,
            max_text_len: None,
        }
    }

    fn token_logprobs(&self, text: &str) -> Result<TokenLogProbs, ProviderError>;
}

/// Scores `text` with `provider`, enforcing the `min_tokens` floor.
pub fn score_tokens(text: &str, provider: &dyn ScorerProvider, min_tokens: usize) -> Result<TokenLogProbs> {
    score_tokens_cached(text, provider, min_tokens, None, None)
}

/// As [`score_tokens`], consulting and filling `cache` first.
pub fn score_tokens_cached(
    text: &str,
    provider: &dyn ScorerProvider,
    min_tokens: usize,
    cache: Option<&CacheStore>,
    counter: Option<&StageCounter>,
) -> Result<TokenLogProbs> {
    if text.trim().is_empty() {
        return Err(Error::InvalidText);
    }
    if let Some(max) = provider.capabilities().max_text_len {
        if text.len() > max {
            return Err(ProviderError::new(
                provider.scorer_id(),
                format!("text of {} bytes exceeds provider limit {max}", text.len()),
            )
            .into());
        }
    }
    let key = CacheKey {
        kind: CacheKind::Score,
        provider_id: provider.provider_id().to_string(),
        model_id: provider.model_id().to_string(),
        prompt: String::new(),
        params_digest: provider.params_digest(),
        text_digest: text_digest(text),
        index: 0,
    };
    let cached = match cache {
        Some(store) => store.get_logprobs(&key)?.filter(|t| t.validate().is_ok()),
        None => None,
    };
    let tlp = match cached {
        Some(t) => {
            if let Some(c) = counter {
                c.hit();
            }
            t
        }
        None => {
            if let Some(c) = counter {
                c.call();
            }
            let t = provider.token_logprobs(text)?;
            t.validate()
                .map_err(|e| ProviderError::new(provider.scorer_id(), e.to_string()))?;
            if let Some(store) = cache {
                store.put(&key, &CachedValue::LogProbs(t.clone()))?;
            }
            t
        }
    };
    if tlp.len() < min_tokens.max(1) {
        return Err(Error::TooShort {
            scored: tlp.len(),
            min: min_tokens.max(1),
        });
    }
    Ok(tlp)
}

/// Negated mean token log-probability, in nats per token.
pub fn log_ppl(tlp: &TokenLogProbs, min_tokens: usize) -> Result<f64> {
    let n = tlp.logprobs.len();
    if n == 0 || n < min_tokens {
        return Err(Error::TooShort {
            scored: n,
            min: min_tokens.max(1),
        });
    }
    let sum: f64 = tlp.logprobs.iter().sum();
    let value = -sum / n as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite { what: "log-perplexity" });
    }
    // -0.0 from an all-zero sum
    Ok(if value == 0.0 { 0.0 } else { value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tlp(logprobs: Vec<f64>) -> TokenLogProbs {
        TokenLogProbs {
            scorer_id: "test".into(),
            tokens: (0..logprobs.len()).map(|i| format!("t{i}")).collect(),
            logprobs,
            skipped_prefix: 0,
        }
    }

    #[test]
    fn certain_tokens_give_zero() {
        let v = log_ppl(&tlp(vec![0.0; 8]), 8).unwrap();
        assert_eq!(v, 0.0);
        assert!(v.is_sign_positive());
    }

    #[test]
    fn constant_logprob() {
        assert_eq!(log_ppl(&tlp(vec![-1.0; 3]), 1).unwrap(), 1.0);
    }

    #[test]
    fn smoothed_unigram_example() {
        let lps = vec![(3.0f64 / 7.0).ln(), (2.0f64 / 7.0).ln(), (2.0f64 / 7.0).ln()];
        let expected = -((3.0f64 / 7.0).ln() + 2.0 * (2.0f64 / 7.0).ln()) / 3.0;
        let got = log_ppl(&tlp(lps), 1).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 1.1176079324593131).abs() < 1e-12);
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            log_ppl(&tlp(vec![-1.0; 3]), 8),
            Err(Error::TooShort { scored: 3, min: 8 })
        ));
        assert!(matches!(log_ppl(&tlp(vec![]), 0), Err(Error::TooShort { .. })));
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut lps in prop::collection::vec(-20.0f64..=0.0, 1..40), seed in any::<u64>()) {
            let a = log_ppl(&tlp(lps.clone()), 1).unwrap();
            use rand::{seq::SliceRandom, SeedableRng};
            lps.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = log_ppl(&tlp(lps), 1).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn lowering_one_logprob_raises_log_ppl(
            lps in prop::collection::vec(-20.0f64..=0.0, 1..40),
            which in any::<prop::sample::Index>(),
            drop in 1e-3f64..5.0,
        ) {
            let before = log_ppl(&tlp(lps.clone()), 1).unwrap();
            let mut lowered = lps;
            let i = which.index(lowered.len());
            lowered[i] -= drop;
            let after = log_ppl(&tlp(lowered), 1).unwrap();
            prop_assert!(after > before);
        }
    }
}
