//! Logical simulation time.
//!
//! One tick is one logical millisecond. Workflows advance in whole days and
//! order work inside a day by millisecond offsets.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct LogicalTime(pub u64);

impl LogicalTime {
    pub const ZERO: LogicalTime = LogicalTime(0);
    pub const MILLIS_PER_SECOND: u64 = 1_000;
    pub const MILLIS_PER_MINUTE: u64 = 60_000;
    pub const MILLIS_PER_DAY: u64 = 86_400_000;

    pub const fn from_millis(ms: u64) -> Self {
        LogicalTime(ms)
    }

    pub const fn from_secs(s: u64) -> Self {
        LogicalTime(s * Self::MILLIS_PER_SECOND)
    }

    pub const fn from_days(d: u64) -> Self {
        LogicalTime(d * Self::MILLIS_PER_DAY)
    }

    pub const fn millis(self) -> u64 {
        self.0
    }

    /// Whole days since the epoch of the simulation.
    pub const fn day(self) -> u64 {
        self.0 / Self::MILLIS_PER_DAY
    }

    pub fn saturating_sub(self, ms: u64) -> LogicalTime {
        LogicalTime(self.0.saturating_sub(ms))
    }
}

impl Add<u64> for LogicalTime {
    type Output = LogicalTime;
    fn add(self, rhs: u64) -> LogicalTime {
        LogicalTime(self.0 + rhs)
    }
}

impl Sub for LogicalTime {
    type Output = u64;
    fn sub(self, rhs: LogicalTime) -> u64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for LogicalTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let day = self.day();
        let rem = self.0 % Self::MILLIS_PER_DAY;
        write!(f, "d{day}+{rem}ms")
    }
}

/// Mutable clock owned by a simulation loop.
#[derive(Debug, Clone, Default)]
pub struct Clock {
    now: LogicalTime,
}

impl Clock {
    pub fn new(start: LogicalTime) -> Self {
        Self { now: start }
    }

    pub fn now(&self) -> LogicalTime {
        self.now
    }

    /// Moves the clock forward; never backwards.
    pub fn advance_to(&mut self, t: LogicalTime) {
        if t > self.now {
            self.now = t;
        }
    }

    pub fn advance_by(&mut self, ms: u64) -> LogicalTime {
        self.now = self.now + ms;
        self.now
    }
}
