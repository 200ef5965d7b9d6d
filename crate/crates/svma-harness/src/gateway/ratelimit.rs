//! Sliding-window rate limiter, one per endpoint.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use super::Clock;

const WINDOW_MS: u64 = 60_000;

/// Allows at most `limit` acquisitions inside any trailing 60 s window,
/// blocking (via the clock) until a slot frees up.
pub struct RateLimiter {
    limit: usize,
    clock: Arc<dyn Clock>,
    issued: Mutex<VecDeque<u64>>,
}

impl RateLimiter {
    pub fn new(requests_per_minute: u32, clock: Arc<dyn Clock>) -> Self {
        RateLimiter {
            limit: requests_per_minute as usize,
            clock,
            issued: Mutex::new(VecDeque::new()),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait_ms = {
                let mut issued = self.issued.lock().unwrap();
                let now = self.clock.now_ms();
                while let Some(&oldest) = issued.front() {
                    if now.saturating_sub(oldest) >= WINDOW_MS {
                        issued.pop_front();
                    } else {
                        break;
                    }
                }
                if issued.len() < self.limit {
                    issued.push_back(now);
                    return;
                }
                let oldest = *issued.front().expect("nonempty at limit");
                oldest + WINDOW_MS - now
            };
            self.clock.sleep_ms(wait_ms.max(1));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ManualClock;

    #[test]
    fn never_exceeds_limit_in_any_window() {
        let clock = Arc::new(ManualClock::new(0));
        let limiter = RateLimiter::new(5, clock.clone());
        let mut grants: Vec<u64> = Vec::new();
        for _ in 0..23 {
            limiter.acquire();
            grants.push(clock.now_ms());
            clock.sleep_ms(700);
        }
        for (i, &t) in grants.iter().enumerate() {
            let in_window = grants[..=i]
                .iter()
                .filter(|&&g| t.saturating_sub(g) < WINDOW_MS)
                .count();
            assert!(in_window <= 5, "window ending at {t} held {in_window} grants");
        }
    }

    #[test]
    fn burst_blocks_until_window_frees() {
        let clock = Arc::new(ManualClock::new(0));
        let limiter = RateLimiter::new(2, clock.clone());
        limiter.acquire();
        limiter.acquire();
        assert_eq!(clock.now_ms(), 0);
        limiter.acquire();
        assert!(clock.now_ms() >= WINDOW_MS);
    }
}
