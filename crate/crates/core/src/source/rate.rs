use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

pub trait Clock {
    /// Time since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Clone)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Manually driven clock; `sleep` advances time instantly.
#[derive(Debug, Clone, Default)]
pub struct MockClock {
    now: Arc<Mutex<Duration>>,
}

impl MockClock {
    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for MockClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

/// Sliding-window limiter: at most `limit` acquisitions in any `window`.
#[derive(Debug)]
pub struct RateLimiter {
    limit: usize,
    window: Duration,
    history: VecDeque<Duration>,
}

impl RateLimiter {
    pub fn per_minute(limit: u32) -> Self {
        Self::new(limit as usize, Duration::from_secs(60))
    }

    pub fn new(limit: usize, window: Duration) -> Self {
        assert!(limit > 0);
        Self {
            limit,
            window,
            history: VecDeque::with_capacity(limit),
        }
    }

    /// Blocks on `clock` until a slot is free, then takes it. Returns the
    /// acquisition time.
    pub fn acquire(&mut self, clock: &impl Clock) -> Duration {
        loop {
            let now = clock.now();
            while let Some(&t) = self.history.front() {
                if now >= t + self.window {
                    self.history.pop_front();
                } else {
                    break;
                }
            }
            if self.history.len() < self.limit {
                self.history.push_back(now);
                return now;
            }
            let wait = self.history[0] + self.window - now;
            clock.sleep(wait);
        }
    }
}
