use std::sync::Arc;

use crate::cache::CacheStore;
use crate::counters::RunCounters;

/// Shared per-run state threaded through rewriting, scoring and generation.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub cache: Option<Arc<CacheStore>>,
    pub counters: Arc<RunCounters>,
    /// Extra attempts when a provider returns blank text.
    pub empty_retries: u32,
}

impl Default for RunContext {
    fn default() -> Self {
        Self {
            cache: None,
            counters: Arc::new(RunCounters::default()),
            empty_retries: 2,
        }
    }
}

impl RunContext {
    pub fn with_cache(cache: Arc<CacheStore>) -> Self {
        Self {
            cache: Some(cache),
            ..Self::default()
        }
    }

    pub fn cache(&self) -> Option<&CacheStore> {
        self.cache.as_deref()
    }
}
