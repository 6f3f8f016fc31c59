//! Integer time base.
//!
//! All timing arithmetic runs on whole ticks of a fixed [`Quantum`]; floating
//! point only appears once a duration is handed to the plant model.

use std::fmt;
use std::ops::{Add, AddAssign, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// A point in time or a duration, counted in ticks of the scenario quantum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Time(pub u64);

impl Time {
    pub const ZERO: Time = Time(0);

    /// Sentinel for "never": a dormant chain with no future activation.
    pub const NEVER: Time = Time(u64::MAX);

    #[inline]
    pub const fn ticks(self) -> u64 {
        self.0
    }

    #[inline]
    pub const fn is_never(self) -> bool {
        self.0 == u64::MAX
    }

    #[inline]
    pub fn checked_sub(self, rhs: Time) -> Option<Time> {
        self.0.checked_sub(rhs.0).map(Time)
    }

    #[inline]
    pub fn saturating_sub(self, rhs: Time) -> Time {
        Time(self.0.saturating_sub(rhs.0))
    }

    /// Signed difference `self - rhs` in ticks.
    #[inline]
    pub fn signed_diff(self, rhs: Time) -> i64 {
        self.0 as i64 - rhs.0 as i64
    }
}

impl Add for Time {
    type Output = Time;
    #[inline]
    fn add(self, rhs: Time) -> Time {
        Time(self.0.checked_add(rhs.0).expect("time overflow"))
    }
}

impl AddAssign for Time {
    #[inline]
    fn add_assign(&mut self, rhs: Time) {
        *self = *self + rhs;
    }
}

impl Sub for Time {
    type Output = Time;
    #[inline]
    fn sub(self, rhs: Time) -> Time {
        Time(self.0.checked_sub(rhs.0).expect("time underflow"))
    }
}

impl SubAssign for Time {
    #[inline]
    fn sub_assign(&mut self, rhs: Time) {
        *self = *self - rhs;
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_never() {
            f.write_str("never")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Length of one tick, in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Quantum(u64);

impl Quantum {
    pub const MICROSECOND: Quantum = Quantum(1_000);
    pub const MILLISECOND: Quantum = Quantum(1_000_000);

    pub fn from_nanos(nanos: u64) -> Option<Quantum> {
        (nanos > 0).then_some(Quantum(nanos))
    }

    pub fn from_micros(micros: u64) -> Option<Quantum> {
        micros.checked_mul(1_000).and_then(Quantum::from_nanos)
    }

    pub fn nanos(self) -> u64 {
        self.0
    }

    pub fn tick_secs(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    pub fn to_secs(self, t: Time) -> f64 {
        // One rounding: whole milliseconds land on the nearest double.
        (t.0 as f64 * self.0 as f64) / 1e9
    }

    pub fn to_millis(self, t: Time) -> f64 {
        t.0 as f64 * self.0 as f64 * 1e-6
    }

    /// Ticks for `ms` milliseconds, or `None` if `ms` is not a whole number of
    /// ticks.
    pub fn from_millis(self, ms: f64) -> Option<Time> {
        if !ms.is_finite() || ms < 0.0 {
            return None;
        }
        let ticks = ms * 1e6 / self.0 as f64;
        let rounded = ticks.round();
        // Millisecond inputs such as 0.2 are not exact in binary; accept them
        // when they land within a millionth of a tick.
        if (ticks - rounded).abs() > 1e-6 * rounded.max(1.0) {
            return None;
        }
        Some(Time(rounded as u64))
    }

    /// One millisecond in ticks, if the quantum divides it.
    pub fn millisecond(self) -> Option<Time> {
        (1_000_000 % self.0 == 0).then(|| Time(1_000_000 / self.0))
    }
}

impl Default for Quantum {
    fn default() -> Self {
        Quantum::MICROSECOND
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn millis_conversion_respects_alignment() {
        let q = Quantum::MICROSECOND;
        assert_eq!(q.from_millis(0.2), Some(Time(200)));
        assert_eq!(q.from_millis(20.0), Some(Time(20_000)));
        assert_eq!(q.from_millis(0.0005), None);
        assert_eq!(Quantum::MILLISECOND.from_millis(0.2), None);
        assert_eq!(q.from_millis(-1.0), None);
        assert_eq!(q.millisecond(), Some(Time(1_000)));
        assert_eq!(Quantum::from_micros(3).unwrap().millisecond(), None);
    }

    #[test]
    fn seconds() {
        let q = Quantum::MICROSECOND;
        assert!((q.to_secs(Time(1_500_000)) - 1.5).abs() < 1e-12);
        assert!((q.to_millis(Time(2_500)) - 2.5).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "time underflow")]
    fn subtraction_underflow_panics() {
        let _ = Time(1) - Time(2);
    }
}
