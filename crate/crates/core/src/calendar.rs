//! Calendar descriptors attached to every instant: day of the week and slot
//! of the day. Both are pure functions of the timestamp.

use crate::error::{bail, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalendarSpec {
    pub days_per_week: usize,
    pub slots_per_day: usize,
    pub slot_minutes: usize,
}

impl Default for CalendarSpec {
    fn default() -> Self {
        CalendarSpec {
            days_per_week: 7,
            slots_per_day: 288,
            slot_minutes: 5,
        }
    }
}

impl CalendarSpec {
    pub fn validate(&self) -> Result<()> {
        if self.days_per_week == 0 || self.slots_per_day == 0 {
            bail!(Config, "calendar counts must be positive: {self:?}");
        }
        if self.slots_per_day * self.slot_minutes != 1440 {
            bail!(
                Config,
                "slots_per_day ({}) x slot_minutes ({}) must equal 1440",
                self.slots_per_day,
                self.slot_minutes
            );
        }
        Ok(())
    }

    pub fn step_seconds(&self) -> i64 {
        self.slot_minutes as i64 * 60
    }

    /// Day-of-week id of a Unix timestamp (seconds, UTC); Monday is 0.
    pub fn day_id(&self, timestamp: i64) -> usize {
        let days = timestamp.div_euclid(SECONDS_PER_DAY);
        // 1970-01-01 was a Thursday.
        (days + 3).rem_euclid(self.days_per_week as i64) as usize
    }

    /// Slot-of-day id of a Unix timestamp (seconds, UTC).
    pub fn slot_id(&self, timestamp: i64) -> usize {
        let secs = timestamp.rem_euclid(SECONDS_PER_DAY);
        (secs / self.step_seconds()) as usize
    }

    /// Flat (day, slot) cell index in `0..days_per_week * slots_per_day`.
    pub fn cell(&self, timestamp: i64) -> usize {
        self.day_id(timestamp) * self.slots_per_day + self.slot_id(timestamp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_bad_spec_rejected() {
        CalendarSpec::default().validate().unwrap();
        let bad = CalendarSpec {
            slots_per_day: 100,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn known_dates() {
        let c = CalendarSpec::default();
        // 2024-01-01T00:00:00Z, a Monday.
        let monday = 1_704_067_200;
        assert_eq!(c.day_id(monday), 0);
        assert_eq!(c.slot_id(monday), 0);
        // 2024-01-07T09:07:00Z, Sunday, slot 9*12+1.
        let t = monday + 6 * SECONDS_PER_DAY + 9 * 3600 + 7 * 60;
        assert_eq!(c.day_id(t), 6);
        assert_eq!(c.slot_id(t), 109);
        assert_eq!(c.day_id(0), 3);
        assert_eq!(c.day_id(-1), 2);
        assert_eq!(c.slot_id(-1), 287);
    }
}
