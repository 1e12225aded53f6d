//! Machine-generated text detection from rewrite variation.
//!
//! A text is rewritten k times by an LLM and every version is scored for
//! log-perplexity. Human text tends to move a lot when rewritten, while
//! machine text barely moves. The detector turns the mean squared
//! deviation of the rewrites' log-perplexities around the original's into a
//! score where higher means more likely human.
//!
//! ```no_run
//! use varybalance::{detect, DetectorConfig, Label, MockRewriter, RunContext, TextSample};
//! use varybalance::scorer::NGramModel;
//!
//! let scorer = NGramModel::load("model.json".as_ref()).unwrap();
//! let sample = TextSample::new("s1", "The big dog ran fast. It was a happy day.", Label::Unknown);
//! let score = detect(&sample, &DetectorConfig::default(), &MockRewriter::default(), &scorer, &RunContext::default());
//! ```

pub mod cache;
pub mod config;
pub mod context;
pub mod counters;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod http;
pub mod limiter;
pub mod rewriter;
pub mod scorer;
pub mod synth;
pub mod types;

pub use cache::{CacheKey, CacheKind, CacheStore};
pub use config::{DetectorConfig, RewriterSettings, ScorerSettings};
pub use context::RunContext;
pub use detector::{classify, combine, detect, detect_all, detect_with_bundle};
pub use error::{Error, ProviderError, Result, Stage};
pub use evaluation::{auroc, evaluate, roc_curve, EvalOptions, EvalReport};
pub use http::RemoteSettings;
pub use limiter::InflightLimiter;
pub use rewriter::{IdentityRewriter, MockRewriter, RewriteProvider};
pub use scorer::ScorerProvider;
pub use types::{Label, RewriteBundle, TextSample, TokenLogProbs, Variant, VaryBalanceScore};
