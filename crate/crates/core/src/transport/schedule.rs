use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::TransportError;
use crate::durations::secs;

/// How the per-batch pause combines with the last intra-batch gap.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PauseMode {
    /// Cross-batch gap is `intra_gap + batch_pause`.
    #[default]
    Additive,
    /// Cross-batch gap is `batch_pause` alone.
    Replace,
}

/// Sender pacing: bursts of `batch_size` messages `intra_gap` apart, with an
/// extra `batch_pause` between bursts, never exceeding `window_limit`
/// messages in any sliding `window`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateConfig {
    pub window_limit: u32,
    #[serde(with = "secs")]
    pub window: Duration,
    pub batch_size: u32,
    #[serde(with = "secs")]
    pub intra_gap: Duration,
    #[serde(with = "secs")]
    pub batch_pause: Duration,
    pub pause_mode: PauseMode,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            window_limit: 20,
            window: Duration::from_secs(30),
            batch_size: 5,
            intra_gap: Duration::from_secs(4),
            batch_pause: Duration::from_millis(3500),
            pause_mode: PauseMode::Additive,
        }
    }
}

impl RateConfig {
    /// Gap preceding message `i` (i >= 1).
    fn gap_before(&self, i: usize) -> Duration {
        if i.is_multiple_of(self.batch_size as usize) {
            match self.pause_mode {
                PauseMode::Additive => self.intra_gap + self.batch_pause,
                PauseMode::Replace => self.batch_pause,
            }
        } else {
            self.intra_gap
        }
    }

    fn period(&self) -> Duration {
        (1..=self.batch_size as usize).map(|i| self.gap_before(i)).sum()
    }

    fn offsets_unchecked(&self, n: usize) -> Vec<Duration> {
        let mut out = Vec::with_capacity(n);
        let mut t = Duration::ZERO;
        for i in 0..n {
            if i > 0 {
                t += self.gap_before(i);
            }
            out.push(t);
        }
        out
    }

    /// Largest number of sends the steady-state schedule places in one window.
    pub fn peak_window_load(&self) -> usize {
        let period = self.period().as_secs_f64();
        let periods = (self.window.as_secs_f64() / period).ceil() as usize;
        // Every full period inside the window contributes a whole batch.
        let floor_load = (self.window.as_secs_f64() / period).floor() as usize * self.batch_size as usize;
        if floor_load > self.window_limit as usize {
            return floor_load;
        }
        let probe = self.batch_size as usize * (periods + 2);
        max_in_window(&self.offsets_unchecked(probe), self.window)
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        let bad = |reason: String| Err(TransportError::Config(reason));
        if self.window.is_zero() || self.intra_gap.is_zero() || self.batch_pause.is_zero() {
            return bad("all durations must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.window_limit == 0 {
            return bad("window_limit must be at least 1".into());
        }
        let peak = self.peak_window_load();
        if peak > self.window_limit as usize {
            return bad(format!(
                "schedule places {peak} sends in a {:?} window, limit is {}",
                self.window, self.window_limit
            ));
        }
        Ok(())
    }
}

/// Send offsets from session start for `n` messages.
pub fn schedule(n: usize, rc: &RateConfig) -> Result<Vec<Duration>, TransportError> {
    rc.validate()?;
    Ok(rc.offsets_unchecked(n))
}

/// Maximum number of sorted `times` inside any half-open window `(t - window, t]`.
pub fn max_in_window(times: &[Duration], window: Duration) -> usize {
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..times.len() {
        while times[hi].saturating_sub(times[lo]) >= window {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    best
}
