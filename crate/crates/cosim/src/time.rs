//! Integer-nanosecond simulation timeline shared by all federates.
//!
//! All scheduling, stepping and exchange arithmetic is done on integer
//! nanoseconds so that runs are reproducible bit for bit. Floating-point
//! seconds only appear at the numerical boundary (circuit integration,
//! metrics) and in the scenario files.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};

const NANOS_PER_SEC: u64 = 1_000_000_000;

/// A point on the simulation timeline, in nanoseconds since scenario start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimInstant {
    ticks: u64,
}

/// A span of simulation time, in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimDuration {
    ticks: u64,
}

impl SimInstant {
    pub const ZERO: SimInstant = SimInstant { ticks: 0 };

    pub const fn from_nanos(ticks: u64) -> Self {
        Self { ticks }
    }

    pub const fn as_nanos(self) -> u64 {
        self.ticks
    }

    pub fn as_secs_f64(self) -> f64 {
        self.ticks as f64 / NANOS_PER_SEC as f64
    }

    /// Duration since an earlier instant. Panics if `earlier` is later.
    pub fn since(self, earlier: SimInstant) -> SimDuration {
        SimDuration::from_nanos(
            self.ticks
                .checked_sub(earlier.ticks)
                .expect("instant ordering violated"),
        )
    }

    pub fn checked_sub(self, other: SimInstant) -> Option<SimDuration> {
        self.ticks.checked_sub(other.ticks).map(SimDuration::from_nanos)
    }

    /// Formats the time column of a CSV row: seconds with nine decimals.
    pub fn format_seconds(self) -> String {
        format!("{}.{:09}", self.ticks / NANOS_PER_SEC, self.ticks % NANOS_PER_SEC)
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration { ticks: 0 };

    pub const fn from_nanos(ticks: u64) -> Self {
        Self { ticks }
    }

    pub const fn from_micros(us: u64) -> Self {
        Self { ticks: us * 1_000 }
    }

    pub const fn from_millis(ms: u64) -> Self {
        Self { ticks: ms * 1_000_000 }
    }

    pub const fn from_secs(s: u64) -> Self {
        Self { ticks: s * NANOS_PER_SEC }
    }

    /// Nearest-nanosecond conversion from floating-point seconds.
    pub fn from_secs_f64(s: f64) -> Self {
        assert!(s >= 0.0 && s.is_finite(), "duration must be finite and non-negative");
        Self { ticks: (s * NANOS_PER_SEC as f64).round() as u64 }
    }

    pub const fn as_nanos(self) -> u64 {
        self.ticks
    }

    pub fn as_secs_f64(self) -> f64 {
        self.ticks as f64 / NANOS_PER_SEC as f64
    }

    pub const fn is_zero(self) -> bool {
        self.ticks == 0
    }

    /// True if `self` is a whole multiple of `step`.
    pub fn is_multiple_of(self, step: SimDuration) -> bool {
        step.ticks != 0 && self.ticks % step.ticks == 0
    }

    pub fn checked_div(self, other: SimDuration) -> Option<u64> {
        if other.ticks == 0 {
            None
        } else {
            Some(self.ticks / other.ticks)
        }
    }

    pub fn saturating_sub(self, other: SimDuration) -> SimDuration {
        SimDuration::from_nanos(self.ticks.saturating_sub(other.ticks))
    }
}

impl Add<SimDuration> for SimInstant {
    type Output = SimInstant;
    fn add(self, rhs: SimDuration) -> SimInstant {
        SimInstant::from_nanos(self.ticks + rhs.ticks)
    }
}

impl AddAssign<SimDuration> for SimInstant {
    fn add_assign(&mut self, rhs: SimDuration) {
        self.ticks += rhs.ticks;
    }
}

impl Sub<SimDuration> for SimInstant {
    type Output = SimInstant;
    fn sub(self, rhs: SimDuration) -> SimInstant {
        SimInstant::from_nanos(self.ticks - rhs.ticks)
    }
}

impl Add for SimDuration {
    type Output = SimDuration;
    fn add(self, rhs: SimDuration) -> SimDuration {
        SimDuration::from_nanos(self.ticks + rhs.ticks)
    }
}

impl Sub for SimDuration {
    type Output = SimDuration;
    fn sub(self, rhs: SimDuration) -> SimDuration {
        SimDuration::from_nanos(self.ticks - rhs.ticks)
    }
}

impl Mul<u64> for SimDuration {
    type Output = SimDuration;
    fn mul(self, rhs: u64) -> SimDuration {
        SimDuration::from_nanos(self.ticks * rhs)
    }
}

impl fmt::Display for SimInstant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.format_seconds())
    }
}

impl fmt::Display for SimDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ns = self.ticks;
        if ns == 0 {
            write!(f, "0s")
        } else if ns % NANOS_PER_SEC == 0 {
            write!(f, "{}s", ns / NANOS_PER_SEC)
        } else if ns % 1_000_000 == 0 {
            write!(f, "{}ms", ns / 1_000_000)
        } else if ns % 1_000 == 0 {
            write!(f, "{}us", ns / 1_000)
        } else {
            write!(f, "{}ns", ns)
        }
    }
}

/// Parses a duration written with a unit suffix: `"50us"`, `"1.5ms"`, `"2s"`, `"10ns"`.
///
/// Decimal values are converted at nanosecond resolution with rounding to the
/// nearest tick.
pub fn parse_duration(text: &str) -> Result<SimDuration, String> {
    let text = text.trim();
    let (number, scale) = if let Some(v) = text.strip_suffix("ns") {
        (v, 1.0)
    } else if let Some(v) = text.strip_suffix("us") {
        (v, 1e3)
    } else if let Some(v) = text.strip_suffix("ms") {
        (v, 1e6)
    } else if let Some(v) = text.strip_suffix('s') {
        (v, 1e9)
    } else {
        return Err(format!("duration `{text}` is missing a unit suffix (ns/us/ms/s)"));
    };
    let value: f64 = number
        .trim()
        .parse()
        .map_err(|_| format!("duration `{text}` has a malformed numeric part"))?;
    if !value.is_finite() || value < 0.0 {
        return Err(format!("duration `{text}` must be finite and non-negative"));
    }
    Ok(SimDuration::from_nanos((value * scale).round() as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_is_exact() {
        let t = SimInstant::ZERO + SimDuration::from_micros(50) * 3;
        assert_eq!(t.as_nanos(), 150_000);
        assert_eq!(t.since(SimInstant::from_nanos(100_000)).as_nanos(), 50_000);
    }

    #[test]
    fn multiples_and_division() {
        let step = SimDuration::from_micros(50);
        assert!(SimDuration::from_millis(1).is_multiple_of(step));
        assert!(!SimDuration::from_nanos(75_000).is_multiple_of(step));
        assert_eq!(SimDuration::from_millis(1).checked_div(step), Some(20));
    }

    #[test]
    fn parse_suffixes() {
        assert_eq!(parse_duration("50us").unwrap(), SimDuration::from_micros(50));
        assert_eq!(parse_duration("1.5ms").unwrap(), SimDuration::from_nanos(1_500_000));
        assert_eq!(parse_duration("2s").unwrap(), SimDuration::from_secs(2));
        assert_eq!(parse_duration("0.25us").unwrap(), SimDuration::from_nanos(250));
        assert!(parse_duration("12").is_err());
        assert!(parse_duration("-1ms").is_err());
    }

    #[test]
    fn seconds_formatting_is_fixed_width() {
        assert_eq!(SimInstant::from_nanos(1_234).format_seconds(), "0.000001234");
        assert_eq!(SimInstant::from_nanos(2_500_000_000).format_seconds(), "2.500000000");
    }
}
