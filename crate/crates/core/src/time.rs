//! Timestamp helpers. All event times are integer microseconds since the Unix
//! epoch; time-of-day rules are applied to the wall clock as recorded in the
//! input files.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const MICROS_PER_SECOND: i64 = 1_000_000;
pub const MICROS_PER_DAY: i64 = 86_400 * MICROS_PER_SECOND;

/// Calendar date of a timestamp.
pub fn date_of(ts: i64) -> NaiveDate {
    DateTime::from_timestamp_micros(ts)
        .expect("timestamp within chrono's range")
        .date_naive()
}

/// Microseconds elapsed since midnight.
pub fn micros_of_day(ts: i64) -> i64 {
    ts.rem_euclid(MICROS_PER_DAY)
}

pub fn midnight_micros(day: NaiveDate) -> i64 {
    day.and_time(NaiveTime::MIN).and_utc().timestamp_micros()
}

/// Parses `2013-03-04T10:15:30.123456`, with optional `Z`/offset suffix or a
/// space separator. Missing fractional digits are zero-padded.
pub fn parse_iso8601(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp_micros());
    }
    let body = s.strip_suffix('Z').unwrap_or(s);
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(body, fmt) {
            return Ok(dt.and_utc().timestamp_micros());
        }
    }
    Err(Error::Parse(format!("bad ISO-8601 timestamp `{s}`")))
}

/// Inverse of [`parse_iso8601`], always with six fractional digits.
pub fn format_iso8601(ts: i64) -> String {
    DateTime::from_timestamp_micros(ts)
        .expect("timestamp within chrono's range")
        .naive_utc()
        .format("%Y-%m-%dT%H:%M:%S%.6f")
        .to_string()
}

/// A wall-clock time, microseconds after midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeOfDay(i64);

impl TimeOfDay {
    pub fn from_hms(h: u32, m: u32, s: u32) -> Self {
        TimeOfDay(((h as i64 * 60 + m as i64) * 60 + s as i64) * MICROS_PER_SECOND)
    }

    pub fn from_micros(us: i64) -> Result<Self> {
        if (0..=MICROS_PER_DAY).contains(&us) {
            Ok(TimeOfDay(us))
        } else {
            Err(Error::InvalidArgument(format!("time of day {us}us out of range")))
        }
    }

    pub fn micros(self) -> i64 {
        self.0
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let secs = self.0 / MICROS_PER_SECOND;
        let frac = self.0 % MICROS_PER_SECOND;
        let (h, m, s) = (secs / 3600, (secs / 60) % 60, secs % 60);
        if frac != 0 {
            write!(f, "{h:02}:{m:02}:{s:02}.{frac:06}")
        } else if s != 0 {
            write!(f, "{h:02}:{m:02}:{s:02}")
        } else {
            write!(f, "{h:02}:{m:02}")
        }
    }
}

impl FromStr for TimeOfDay {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "24:00" {
            return Ok(TimeOfDay(MICROS_PER_DAY));
        }
        let t = NaiveTime::parse_from_str(s, "%H:%M:%S%.f")
            .or_else(|_| NaiveTime::parse_from_str(s, "%H:%M"))
            .map_err(|_| Error::Parse(format!("bad time of day `{s}`")))?;
        let us = t.num_seconds_from_midnight() as i64 * MICROS_PER_SECOND
            + (t.nanosecond() / 1000) as i64;
        Ok(TimeOfDay(us))
    }
}

impl Serialize for TimeOfDay {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TimeOfDay {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Half-open wall-clock interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: TimeOfDay,
    pub end: TimeOfDay,
}

impl TimeWindow {
    pub fn new(start: TimeOfDay, end: TimeOfDay) -> Self {
        TimeWindow { start, end }
    }

    pub fn hm(h0: u32, m0: u32, h1: u32, m1: u32) -> Self {
        TimeWindow::new(TimeOfDay::from_hms(h0, m0, 0), TimeOfDay::from_hms(h1, m1, 0))
    }

    pub fn contains(&self, tod: i64) -> bool {
        self.start.micros() <= tod && tod < self.end.micros()
    }

    pub fn duration_micros(&self) -> i64 {
        (self.end.micros() - self.start.micros()).max(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_round_trip_keeps_microseconds() {
        let ts = parse_iso8601("2013-03-04T10:15:30.123456").unwrap();
        assert_eq!(format_iso8601(ts), "2013-03-04T10:15:30.123456");
        assert_eq!(micros_of_day(ts), TimeOfDay::from_hms(10, 15, 30).micros() + 123_456);
    }

    #[test]
    fn coarse_timestamps_are_zero_padded() {
        let a = parse_iso8601("2013-03-04T10:15:30").unwrap();
        let b = parse_iso8601("2013-03-04 10:15:30.000000").unwrap();
        let c = parse_iso8601("2013-03-04T10:15:30Z").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a % MICROS_PER_SECOND, 0);
    }

    #[test]
    fn time_of_day_parses_and_prints() {
        let t: TimeOfDay = "16:50".parse().unwrap();
        assert_eq!(t, TimeOfDay::from_hms(16, 50, 0));
        assert_eq!(t.to_string(), "16:50");
        let u: TimeOfDay = "09:00:01.5".parse().unwrap();
        assert_eq!(u.to_string(), "09:00:01.500000");
        assert!("25:00".parse::<TimeOfDay>().is_err());
    }

    #[test]
    fn window_is_half_open() {
        let w = TimeWindow::hm(9, 0, 9, 10);
        assert!(w.contains(TimeOfDay::from_hms(9, 0, 0).micros()));
        assert!(w.contains(TimeOfDay::from_hms(9, 5, 0).micros()));
        assert!(!w.contains(TimeOfDay::from_hms(9, 10, 0).micros()));
    }
}
