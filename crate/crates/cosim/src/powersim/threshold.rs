//! Threshold crossing detection on sampled signals.

use crate::time::SimInstant;

/// Crossing direction a detector reacts to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Rising,
    Falling,
    Both,
}

/// Watches one signal for strict crossings of a level.
#[derive(Debug, Clone)]
pub struct ThresholdDetector {
    pub signal: String,
    pub level: f64,
    pub direction: Direction,
}

/// A detected crossing; the time is linearly interpolated between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub t: SimInstant,
    pub level: f64,
    pub rising: bool,
}

impl ThresholdDetector {
    pub fn new(signal: &str, level: f64, direction: Direction) -> Self {
        Self { signal: signal.into(), level, direction }
    }

    /// Checks one sample pair. Touching the level exactly emits nothing:
    /// crossings are strict, which keeps detection deterministic and free
    /// of chattering. At most one event per step.
    pub fn detect(
        &self,
        previous: f64,
        current: f64,
        t_prev: SimInstant,
        t_now: SimInstant,
    ) -> Option<Crossing> {
        assert!(t_now > t_prev, "samples must be time ordered");
        let rising = previous < self.level && current > self.level;
        let falling = previous > self.level && current < self.level;
        let fires = match self.direction {
            Direction::Rising => rising,
            Direction::Falling => falling,
            Direction::Both => rising || falling,
        };
        if !fires {
            return None;
        }
        let frac = (self.level - previous) / (current - previous);
        let span = t_now.since(t_prev).as_nanos() as f64;
        let t = t_prev + crate::time::SimDuration::from_nanos((frac * span).round() as u64);
        Some(Crossing { t, level: self.level, rising })
    }
}
