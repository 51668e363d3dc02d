//! Small value types shared by the Ethernet and optical sides.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

/// A data rate held as an integer number of Mb/s.
///
/// Traffic is generated and summed in whole Mb/s so that capacity checks and
/// per-tick sums are exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rate(u64);

impl Rate {
    pub const ZERO: Rate = Rate(0);

    pub const fn from_mbps(mbps: u64) -> Self {
        Rate(mbps)
    }

    /// Rounds to the nearest Mb/s. Negative or non-finite input yields `None`.
    pub fn from_gbps(gbps: f64) -> Option<Self> {
        if !gbps.is_finite() || gbps < 0.0 {
            return None;
        }
        Some(Rate((gbps * 1000.0).round() as u64))
    }

    pub const fn mbps(self) -> u64 {
        self.0
    }

    pub fn gbps(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_sub(self, other: Rate) -> Rate {
        Rate(self.0.saturating_sub(other.0))
    }
}

impl Add for Rate {
    type Output = Rate;
    fn add(self, rhs: Rate) -> Rate {
        Rate(self.0 + rhs.0)
    }
}

impl AddAssign for Rate {
    fn add_assign(&mut self, rhs: Rate) {
        self.0 += rhs.0;
    }
}

impl Sub for Rate {
    type Output = Rate;
    fn sub(self, rhs: Rate) -> Rate {
        Rate(self.0 - rhs.0)
    }
}

impl Sum for Rate {
    fn sum<I: Iterator<Item = Rate>>(iter: I) -> Rate {
        iter.fold(Rate::ZERO, |a, b| a + b)
    }
}

impl<'a> Sum<&'a Rate> for Rate {
    fn sum<I: Iterator<Item = &'a Rate>>(iter: I) -> Rate {
        iter.copied().sum()
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} Gb/s", self.gbps())
    }
}

/// Scenario-assigned service identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ServiceId(pub String);

impl fmt::Display for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ServiceId {
    fn from(s: &str) -> Self {
        ServiceId(s.to_string())
    }
}

/// Simulation time, counted in ticks (one tick is one second unless configured otherwise).
pub type Tick = u64;

/// Converts a dB ratio to linear.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear ratio to dB.
pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gbps_round_trip() {
        assert_eq!(Rate::from_gbps(8.6).unwrap().mbps(), 8600);
        assert_eq!(Rate::from_gbps(0.0).unwrap(), Rate::ZERO);
        assert!(Rate::from_gbps(-1.0).is_none());
        assert!(Rate::from_gbps(f64::NAN).is_none());
        assert_eq!(Rate::from_mbps(5400).gbps(), 5.4);
    }

    #[test]
    fn sums_are_exact() {
        let parts = [1700u64, 1500, 1900, 1100, 2300, 1500].map(Rate::from_mbps);
        assert_eq!(parts.iter().sum::<Rate>(), Rate::from_mbps(10_000));
    }
}
