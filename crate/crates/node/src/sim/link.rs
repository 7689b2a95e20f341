//! Point-to-point link model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimTime;

/// Delay, jitter and rate for one direction of a link. Times are in
/// milliseconds, rates in bits per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    pub base_delay_ms: f64,
    pub jitter_ms: f64,
    pub loss_rate: f64,
    pub duplicate_rate: f64,
    /// Allow later messages to overtake earlier ones.
    pub reorder: bool,
    /// `None` means unlimited.
    pub bandwidth_bps: Option<u64>,
}

impl Default for LinkModel {
    /// The WAN setting: 100 ms delay, 4 ms jitter, 100 Mbit/s.
    fn default() -> Self {
        Self {
            base_delay_ms: 100.0,
            jitter_ms: 4.0,
            loss_rate: 0.0,
            duplicate_rate: 0.0,
            reorder: true,
            bandwidth_bps: Some(100_000_000),
        }
    }
}

impl LinkModel {
    pub fn ideal(delay_ms: f64) -> Self {
        Self {
            base_delay_ms: delay_ms,
            jitter_ms: 0.0,
            loss_rate: 0.0,
            duplicate_rate: 0.0,
            reorder: false,
            bandwidth_bps: None,
        }
    }

    pub fn check(&self) -> Result<(), &'static str> {
        let rate = |r: f64| (0.0..=1.0).contains(&r);
        if !rate(self.loss_rate) || !rate(self.duplicate_rate) {
            return Err("link rates must be within [0, 1]");
        }
        if !(self.base_delay_ms >= 0.0 && self.jitter_ms >= 0.0) {
            return Err("link delays must be non-negative");
        }
        if self.bandwidth_bps == Some(0) {
            return Err("bandwidth must be positive");
        }
        Ok(())
    }

    /// Schedules a `size`-byte message sent at `now`: zero, one or two
    /// arrival times.
    pub fn deliver(&self, size: usize, now: SimTime, state: &mut LinkState, rng: &mut impl Rng) -> Vec<SimTime> {
        if self.loss_rate > 0.0 && rng.gen_bool(self.loss_rate) {
            return Vec::new();
        }
        let copies = if self.duplicate_rate > 0.0 && rng.gen_bool(self.duplicate_rate) { 2 } else { 1 };
        (0..copies).map(|_| self.one_arrival(size, now, state, rng)).collect()
    }

    fn one_arrival(&self, size: usize, now: SimTime, state: &mut LinkState, rng: &mut impl Rng) -> SimTime {
        let sent = match self.bandwidth_bps {
            Some(bps) => {
                let start = now.max(state.busy_until);
                state.busy_until = start + (size as u64 * 8 * 1_000_000).div_ceil(bps);
                state.busy_until
            }
            None => now,
        };
        let jitter = if self.jitter_ms > 0.0 {
            rng.gen_range(-self.jitter_ms..=self.jitter_ms)
        } else {
            0.0
        };
        let delay_us = ((self.base_delay_ms + jitter) * 1000.0).max(0.0).round() as u64;
        let mut at = sent + delay_us;
        if !self.reorder {
            at = at.max(state.last_arrival);
        }
        state.last_arrival = state.last_arrival.max(at);
        at
    }
}

/// Mutable per-direction link state.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinkState {
    busy_until: SimTime,
    last_arrival: SimTime,
}
