use serde::{Deserialize, Serialize};
use std::thread;
use std::time::{Duration, Instant};

/// How device time relates to wall time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Samples become available at the channel rate.
    #[default]
    Paced,
    /// No waiting: device time advances as fast as callers consume samples.
    Fast,
}

/// Sleep no closer than this to a deadline; the rest is spent yielding.
const SPIN_WINDOW: Duration = Duration::from_micros(200);

#[derive(Debug, Clone, Copy)]
pub(crate) struct SampleClock {
    pub mode: ClockMode,
    origin: Instant,
    pub epoch_tick: u64,
}

impl SampleClock {
    pub fn new(mode: ClockMode, epoch_tick: u64) -> Self {
        Self { mode, origin: Instant::now(), epoch_tick }
    }

    /// Ticks at `rate` elapsed since the epoch, plus the epoch tick.
    pub fn now_tick(&self, rate: u64) -> u64 {
        let ns = self.origin.elapsed().as_nanos();
        self.epoch_tick + (ns * u128::from(rate) / 1_000_000_000) as u64
    }

    /// Wall instant at which `tick` is reached at `rate`.
    pub fn instant_of(&self, tick: u64, rate: u64) -> Instant {
        let rel = tick.saturating_sub(self.epoch_tick);
        let ns = (u128::from(rel) * 1_000_000_000).div_ceil(u128::from(rate));
        self.origin + Duration::from_nanos(ns as u64)
    }

    /// Blocks until `tick` has passed at `rate`.
    pub fn wait_for(&self, tick: u64, rate: u64) {
        sleep_until(self.instant_of(tick, rate));
    }
}

/// Sleep-until with a short yielding stretch at the end, which keeps the
/// wakeup error well below a subframe without burning a whole core.
pub fn sleep_until(deadline: Instant) {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let left = deadline - now;
        if left > SPIN_WINDOW {
            thread::sleep(left - SPIN_WINDOW);
        } else {
            thread::yield_now();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_instant_round_trip() {
        let c = SampleClock::new(ClockMode::Paced, 1000);
        let at = c.instant_of(1000 + 7680, 7_680_000);
        assert_eq!(at - c.origin, Duration::from_millis(1));
        c.wait_for(1000 + 768, 7_680_000);
        assert!(c.now_tick(7_680_000) >= 1000 + 768);
    }
}
