//! Per-stage provider-call and cache-hit counters for run manifests.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

#[derive(Debug, Default)]
pub struct StageCounter {
    provider_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl StageCounter {
    pub fn call(&self) {
        self.provider_calls.fetch_add(1, Ordering::Relaxed);
    }

    pub fn hit(&self) {
        self.cache_hits.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> StageCounts {
        StageCounts {
            provider_calls: self.provider_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Default)]
pub struct RunCounters {
    pub rewrite: StageCounter,
    pub score: StageCounter,
    pub generate: StageCounter,
}

impl RunCounters {
    pub fn snapshot(&self) -> RunCounts {
        RunCounts {
            rewrite: self.rewrite.snapshot(),
            score: self.score.snapshot(),
            generate: self.generate.snapshot(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub provider_calls: u64,
    pub cache_hits: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub rewrite: StageCounts,
    pub score: StageCounts,
    pub generate: StageCounts,
}

impl RunCounts {
    pub fn provider_calls(&self) -> u64 {
        self.rewrite.provider_calls + self.score.provider_calls + self.generate.provider_calls
    }
}
