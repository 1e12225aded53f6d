//! Rewrite generation.
//!
//! Each of the k rewrites is produced independently from the original
//! text, never from a previous rewrite. With a cache attached, rewrite `i`
//! of a given (provider, model, prompt, params, text) is fetched once and
//! reused forever, so asking for a larger k later only pays for the new
//! indices.

mod mock;
mod openai;

pub use mock::{mock_generate, mock_rewrite, IdentityRewriter, MockRewriter};
pub use openai::ChatClient;

use rayon::prelude::*;

use crate::cache::{CacheKey, CacheKind, CachedValue};
use crate::context::RunContext;
use crate::counters::StageCounter;
use crate::error::{Error, ProviderError, Result};
use crate::types::{text_digest, GenerationParams, Rewrite, RewriteBundle, TextSample};

pub trait RewriteProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn model_id(&self) -> &str;

    fn rewriter_id(&self) -> String {
        format!("{}:{}", self.provider_id(), self.model_id())
    }

    /// Produces rewrite number `index` (1-based) of `text`.
    fn rewrite(
        &self,
        text: &str,
        prompt: &str,
        params: &GenerationParams,
        index: usize,
    ) -> Result<String, ProviderError>;
}

/// Free-form generation from a prompt, used to produce fresh machine answers.
pub trait GenerationProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn model_id(&self) -> &str;

    fn generator_id(&self) -> String {
        format!("{}:{}", self.provider_id(), self.model_id())
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, ProviderError>;
}

/// Calls `produce` until it yields non-blank text or the retry budget is
/// spent, caching the first usable answer under `key`.
pub(crate) fn fetch_text(
    key: &CacheKey,
    ctx: &RunContext,
    counter: &StageCounter,
    index: usize,
    mut produce: impl FnMut() -> Result<String, ProviderError>,
) -> Result<String> {
    if let Some(store) = ctx.cache() {
        if let Some(text) = store.get_text(key)?.filter(|t| !t.trim().is_empty()) {
            counter.hit();
            return Ok(text);
        }
    }
    let attempts = ctx.empty_retries + 1;
    for _ in 0..attempts {
        counter.call();
        let text = produce()?;
        if !text.trim().is_empty() {
            if let Some(store) = ctx.cache() {
                store.put(key, &CachedValue::Text(text.clone()))?;
            }
            return Ok(text);
        }
    }
    Err(Error::EmptyRewrite { index, attempts })
}

/// Produces `k` independent rewrites of `sample`.
pub fn rewrite_k(
    sample: &TextSample,
    k: usize,
    provider: &dyn RewriteProvider,
    prompt: &str,
    params: &GenerationParams,
    ctx: &RunContext,
) -> Result<RewriteBundle> {
    sample.validate()?;
    if k == 0 {
        return Err(Error::InvalidConfig("number of rewrites must be >= 1".into()));
    }
    let digest = text_digest(&sample.content);
    let params_digest = params.digest();
    let rewrites = (1..=k)
        .into_par_iter()
        .map(|index| {
            let key = CacheKey {
                kind: CacheKind::Rewrite,
                provider_id: provider.provider_id().to_string(),
                model_id: provider.model_id().to_string(),
                prompt: prompt.to_string(),
                params_digest: params_digest.clone(),
                text_digest: digest.clone(),
                index,
            };
            let text = fetch_text(&key, ctx, &ctx.counters.rewrite, index, || {
                provider.rewrite(&sample.content, prompt, params, index)
            })?;
            Ok(Rewrite { index, text })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RewriteBundle {
        sample_id: sample.id.clone(),
        rewriter_id: provider.rewriter_id(),
        prompt: prompt.to_string(),
        params: params.clone(),
        rewrites,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::CacheStore;
    use crate::types::{Label, DEFAULT_REWRITE_PROMPT};
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    const TEXT: &str = "The big dog ran fast. It was a happy day. We began to walk home.";

    fn sample() -> TextSample {
        TextSample::new("s1", TEXT, Label::Unknown)
    }

    #[test]
    fn identity_single_rewrite() {
        let b = rewrite_k(
            &sample(),
            1,
            &IdentityRewriter::default(),
            DEFAULT_REWRITE_PROMPT,
            &GenerationParams::default(),
            &RunContext::default(),
        )
        .unwrap();
        assert_eq!(b.k(), 1);
        assert_eq!(b.rewrites[0].text, TEXT);
        assert_eq!(b.prompt, "Revise this text.");
        b.validate().unwrap();
    }

    #[test]
    fn mock_three_distinct_and_stable() {
        let params = GenerationParams {
            seed: Some(7),
            ..Default::default()
        };
        let run = || {
            rewrite_k(
                &sample(),
                3,
                &MockRewriter::default(),
                DEFAULT_REWRITE_PROMPT,
                &params,
                &RunContext::default(),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        let texts: Vec<&str> = a.texts().collect();
        assert_ne!(texts[0], texts[1]);
        assert_ne!(texts[1], texts[2]);
        assert_ne!(texts[0], texts[2]);
        assert_eq!(a.rewrites.iter().map(|r| r.index).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn warm_cache_makes_no_calls_and_extends() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(CacheStore::open(dir.path()).unwrap());
        let provider = MockRewriter::default();
        let params = GenerationParams::default();

        let ctx = RunContext::with_cache(store.clone());
        let three = rewrite_k(&sample(), 3, &provider, DEFAULT_REWRITE_PROMPT, &params, &ctx).unwrap();
        assert_eq!(provider.calls(), 3);

        let ctx2 = RunContext::with_cache(store.clone());
        let again = rewrite_k(&sample(), 3, &provider, DEFAULT_REWRITE_PROMPT, &params, &ctx2).unwrap();
        assert_eq!(provider.calls(), 3);
        assert_eq!(again, three);
        assert_eq!(ctx2.counters.rewrite.snapshot().cache_hits, 3);

        let five = rewrite_k(&sample(), 5, &provider, DEFAULT_REWRITE_PROMPT, &params, &ctx2).unwrap();
        assert_eq!(provider.calls(), 5);
        assert_eq!(&five.rewrites[..3], &three.rewrites[..]);
    }

    #[test]
    fn temperature_is_part_of_key() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(CacheStore::open(dir.path()).unwrap());
        let provider = MockRewriter::default();
        let ctx = RunContext::with_cache(store);
        rewrite_k(
            &sample(),
            2,
            &provider,
            DEFAULT_REWRITE_PROMPT,
            &GenerationParams::default(),
            &ctx,
        )
        .unwrap();
        let hot = GenerationParams {
            temperature: Some(1.0),
            ..Default::default()
        };
        rewrite_k(&sample(), 2, &provider, DEFAULT_REWRITE_PROMPT, &hot, &ctx).unwrap();
        assert_eq!(provider.calls(), 4);
    }

    struct Flaky {
        blanks: AtomicU32,
    }

    impl RewriteProvider for Flaky {
        fn provider_id(&self) -> &str {
            "flaky"
        }
        fn model_id(&self) -> &str {
            "x"
        }
        fn rewrite(&self, text: &str, _: &str, _: &GenerationParams, _: usize) -> Result<String, ProviderError> {
            if self.blanks.load(Ordering::SeqCst) > 0 {
                self.blanks.fetch_sub(1, Ordering::SeqCst);
                Ok("   ".into())
            } else {
                Ok(text.to_uppercase())
            }
        }
    }

    #[test]
    fn blank_rewrites_retried_then_error() {
        let ctx = RunContext {
            empty_retries: 2,
            ..Default::default()
        };
        let ok = Flaky {
            blanks: AtomicU32::new(2),
        };
        let b = rewrite_k(&sample(), 1, &ok, "p", &GenerationParams::default(), &ctx).unwrap();
        assert_eq!(b.rewrites[0].text, TEXT.to_uppercase());

        let bad = Flaky {
            blanks: AtomicU32::new(10),
        };
        let err = rewrite_k(&sample(), 1, &bad, "p", &GenerationParams::default(), &ctx).unwrap_err();
        assert!(matches!(err, Error::EmptyRewrite { index: 1, attempts: 3 }));
    }

    #[test]
    fn zero_k_rejected() {
        let err = rewrite_k(
            &sample(),
            0,
            &MockRewriter::default(),
            "p",
            &GenerationParams::default(),
            &RunContext::default(),
        );
        assert!(err.is_err());
    }
}
