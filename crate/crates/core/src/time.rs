//! Minute-resolution timestamps, the study window and time-of-day bands.

use chrono::{NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

/// Timestamp layout used by every input and output file.
pub const TS_FORMAT: &str = "%Y-%m-%dT%H:%M";
pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Service opens at 06:00 and closes at midnight.
pub const SERVICE_START_MIN: u32 = 6 * 60;
pub const SERVICE_END_MIN: u32 = 24 * 60;
pub const SERVICE_MINUTES: u32 = SERVICE_END_MIN - SERVICE_START_MIN;

/// Number of time-of-day bands; the last one (19:00-24:00) is the reference.
pub const TIME_BANDS: usize = 9;

// Band upper bounds in minutes after midnight.
const BAND_ENDS: [u32; TIME_BANDS] = [390, 465, 525, 570, 960, 1035, 1095, 1140, 1440];

pub fn parse_ts(s: &str) -> Result<NaiveDateTime, chrono::ParseError> {
    NaiveDateTime::parse_from_str(s.trim(), TS_FORMAT)
}

pub fn format_ts(ts: &NaiveDateTime) -> String {
    ts.format(TS_FORMAT).to_string()
}

pub fn parse_date(s: &str) -> Result<NaiveDate, chrono::ParseError> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT)
}

pub fn format_date(d: &NaiveDate) -> String {
    d.format(DATE_FORMAT).to_string()
}

pub fn minute_of_day(ts: &NaiveDateTime) -> u32 {
    ts.hour() * 60 + ts.minute()
}

/// True when the timestamp falls inside [06:00, 24:00) of its own date.
pub fn in_service_hours(ts: &NaiveDateTime) -> bool {
    minute_of_day(ts) >= SERVICE_START_MIN
}

/// Time-of-day band (0..=8) of a minute after midnight.
pub fn time_band(minute: u32) -> usize {
    BAND_ENDS.iter().position(|&end| minute < end).unwrap_or(TIME_BANDS - 1)
}

/// Position of a study unit in the calendar: day index into the window and
/// slot index within the service day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotId {
    pub day: usize,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WindowError {
    #[error("interval of {0} minutes does not divide the 18-hour service day")]
    BadInterval(u32),
    #[error("study window has no days")]
    Empty,
}

/// Ordered set of service days, cut into equal intervals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyWindow {
    days: Vec<NaiveDate>,
    interval_min: u32,
}

impl StudyWindow {
    pub fn new(mut days: Vec<NaiveDate>, interval_min: u32) -> Result<Self, WindowError> {
        if interval_min == 0 || !SERVICE_MINUTES.is_multiple_of(interval_min) {
            return Err(WindowError::BadInterval(interval_min));
        }
        days.sort_unstable();
        days.dedup();
        if days.is_empty() {
            return Err(WindowError::Empty);
        }
        Ok(Self { days, interval_min })
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn interval_min(&self) -> u32 {
        self.interval_min
    }

    pub fn slots_per_day(&self) -> usize {
        (SERVICE_MINUTES / self.interval_min) as usize
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        self.days.binary_search(&date).ok()
    }

    /// Slot containing the timestamp, if it lies inside the window.
    pub fn slot_of(&self, ts: &NaiveDateTime) -> Option<SlotId> {
        let day = self.day_index(ts.date())?;
        let minute = minute_of_day(ts);
        if minute < SERVICE_START_MIN {
            return None;
        }
        let slot = ((minute - SERVICE_START_MIN) / self.interval_min) as usize;
        Some(SlotId { day, slot })
    }

    /// Minute after midnight at which the slot starts.
    pub fn slot_start_minute(&self, slot: usize) -> u32 {
        SERVICE_START_MIN + slot as u32 * self.interval_min
    }

    pub fn slot_start(&self, id: SlotId) -> NaiveDateTime {
        let m = self.slot_start_minute(id.slot);
        let t = NaiveTime::from_hms_opt(m / 60, m % 60, 0).expect("slot start within day");
        self.days[id.day].and_time(t)
    }

    pub fn slot_end(&self, id: SlotId) -> NaiveDateTime {
        self.slot_start(id) + chrono::Duration::minutes(self.interval_min as i64)
    }

    /// Time band of a slot, taken at the slot start.
    pub fn band_of_slot(&self, slot: usize) -> usize {
        time_band(self.slot_start_minute(slot))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2013, 10, d).unwrap()
    }

    #[test]
    fn timestamps_round_trip() {
        let ts = parse_ts("2013-10-28T10:07").unwrap();
        assert_eq!(format_ts(&ts), "2013-10-28T10:07");
        assert!(parse_ts("2013-10-28 10:07").is_err());
    }

    #[test]
    fn fifteen_minute_window_has_72_slots() {
        let w = StudyWindow::new(vec![day(28)], 15).unwrap();
        assert_eq!(w.slots_per_day(), 72);
        let ts = parse_ts("2013-10-28T10:07").unwrap();
        assert_eq!(w.slot_of(&ts), Some(SlotId { day: 0, slot: 16 }));
        assert_eq!(format_ts(&w.slot_start(SlotId { day: 0, slot: 16 })), "2013-10-28T10:00");
        assert!(w.slot_of(&parse_ts("2013-10-28T05:59").unwrap()).is_none());
        assert!(StudyWindow::new(vec![day(28)], 7).is_err());
    }

    #[test]
    fn bands_follow_table_boundaries() {
        assert_eq!(time_band(6 * 60), 0);
        assert_eq!(time_band(6 * 60 + 29), 0);
        assert_eq!(time_band(6 * 60 + 30), 1);
        assert_eq!(time_band(7 * 60 + 45), 2);
        assert_eq!(time_band(8 * 60 + 45), 3);
        assert_eq!(time_band(9 * 60 + 30), 4);
        assert_eq!(time_band(16 * 60), 5);
        assert_eq!(time_band(17 * 60 + 15), 6);
        assert_eq!(time_band(18 * 60 + 15), 7);
        assert_eq!(time_band(19 * 60), 8);
        assert_eq!(time_band(23 * 60 + 59), 8);
    }
}
