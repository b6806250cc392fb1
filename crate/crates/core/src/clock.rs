//! Clock abstraction shared by the live service and the simulator.

use std::sync::Mutex;

use chrono::{DateTime, Utc};

/// Source of "now" for the engine.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

/// Wall clock, truncated to whole seconds.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        let now = Utc::now();
        DateTime::from_timestamp(now.timestamp(), 0).unwrap_or(now)
    }
}

/// Virtual clock that only moves when told to, and never backwards.
#[derive(Debug)]
pub struct VirtualClock {
    now: Mutex<DateTime<Utc>>,
}

impl VirtualClock {
    pub fn starting_at(at: DateTime<Utc>) -> Self {
        VirtualClock { now: Mutex::new(at) }
    }

    /// Moves the clock forward to `at`. Earlier instants are ignored.
    pub fn advance_to(&self, at: DateTime<Utc>) {
        let mut now = self.now.lock().expect("clock poisoned");
        if at > *now {
            *now = at;
        }
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.now.lock().expect("clock poisoned")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn virtual_clock_is_monotonic() {
        let t0 = Utc.with_ymd_and_hms(2022, 11, 12, 0, 0, 0).unwrap();
        let clock = VirtualClock::starting_at(t0);
        clock.advance_to(t0 + chrono::Duration::hours(3));
        clock.advance_to(t0);
        assert_eq!(clock.now(), t0 + chrono::Duration::hours(3));
    }

    #[test]
    fn system_clock_has_second_resolution() {
        assert_eq!(SystemClock.now().timestamp_subsec_nanos(), 0);
    }
}
