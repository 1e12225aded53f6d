//! Process-wide bound on concurrent provider requests.

use std::sync::{Arc, Condvar, Mutex};

/// Counting semaphore shared by every remote provider in a run.
#[derive(Debug, Clone)]
pub struct InflightLimiter {
    inner: Arc<Inner>,
}

#[derive(Debug)]
struct Inner {
    limit: usize,
    state: Mutex<State>,
    freed: Condvar,
}

#[derive(Debug, Default)]
struct State {
    in_flight: usize,
    peak: usize,
}

pub struct Permit<'a> {
    inner: &'a Inner,
}

impl InflightLimiter {
    pub fn new(limit: usize) -> Self {
        Self {
            inner: Arc::new(Inner {
                limit: limit.max(1),
                state: Mutex::new(State::default()),
                freed: Condvar::new(),
            }),
        }
    }

    pub fn limit(&self) -> usize {
        self.inner.limit
    }

    /// Blocks until a slot is free.
    pub fn acquire(&self) -> Permit<'_> {
        let mut state = self.inner.state.lock().expect("limiter poisoned");
        while state.in_flight >= self.inner.limit {
            state = self.inner.freed.wait(state).expect("limiter poisoned");
        }
        state.in_flight += 1;
        state.peak = state.peak.max(state.in_flight);
        Permit { inner: &self.inner }
    }

    /// Highest number of permits held at once so far.
    pub fn peak(&self) -> usize {
        self.inner.state.lock().expect("limiter poisoned").peak
    }
}

impl Default for InflightLimiter {
    fn default() -> Self {
        Self::new(8)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut state = self.inner.state.lock().expect("limiter poisoned");
        state.in_flight -= 1;
        drop(state);
        self.inner.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn never_exceeds_limit() {
        let limiter = InflightLimiter::new(3);
        std::thread::scope(|s| {
            for _ in 0..16 {
                s.spawn(|| {
                    let _p = limiter.acquire();
                    std::thread::sleep(Duration::from_millis(5));
                });
            }
        });
        assert!(limiter.peak() <= 3);
        assert!(limiter.peak() >= 1);
    }

    #[test]
    fn zero_limit_clamped() {
        let limiter = InflightLimiter::new(0);
        let _p = limiter.acquire();
        assert_eq!(limiter.limit(), 1);
    }
}
