//! 6-hourly proleptic Gregorian time axis.

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STEP_HOURS: i64 = 6;
pub const STEPS_PER_DAY: usize = 4;

pub type Timestamp = NaiveDateTime;

pub fn step_duration() -> Duration {
    Duration::hours(STEP_HOURS)
}

pub fn ymd_h(year: i32, month: u32, day: u32, hour: u32) -> Timestamp {
    NaiveDate::from_ymd_opt(year, month, day)
        .and_then(|d| d.and_hms_opt(hour, 0, 0))
        .expect("valid calendar date")
}

/// Accepts `YYYY-MM-DD`, `YYYY-MM-DDTHH:MM` and `YYYY-MM-DDTHH:MM:SS`.
pub fn parse_timestamp(s: &str) -> Result<Timestamp> {
    let s = s.trim();
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).unwrap())
        .map_err(|_| Error::Config(format!("cannot parse timestamp '{s}'")))
}

pub fn format_timestamp(t: &Timestamp) -> String {
    t.format("%Y-%m-%dT%H:%M").to_string()
}

pub fn is_aligned(t: &Timestamp) -> bool {
    t.minute() == 0 && t.second() == 0 && t.nanosecond() == 0 && t.hour() as i64 % STEP_HOURS == 0
}

/// Whole 6-hour steps from `a` to `b` (`b >= a`, both aligned).
pub fn steps_between(a: &Timestamp, b: &Timestamp) -> i64 {
    (*b - *a).num_hours() / STEP_HOURS
}

/// Inclusive, 6-hour aligned interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeRange {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self> {
        if !is_aligned(&start) || !is_aligned(&end) {
            return Err(Error::Config(format!(
                "time range {} .. {} is not aligned to {STEP_HOURS}-hour steps",
                format_timestamp(&start),
                format_timestamp(&end)
            )));
        }
        if end < start {
            return Err(Error::Config(format!(
                "time range ends ({}) before it starts ({})",
                format_timestamp(&end),
                format_timestamp(&start)
            )));
        }
        Ok(Self { start, end })
    }

    /// `first-01-01T00:00` through `last-12-31T18:00`.
    pub fn years(first: i32, last: i32) -> Result<Self> {
        if last < first {
            return Err(Error::Config(format!("year range {first}..{last} is empty")));
        }
        Self::new(ymd_h(first, 1, 1, 0), ymd_h(last, 12, 31, 18))
    }

    /// `start` followed by `n - 1` further steps.
    pub fn from_steps(start: Timestamp, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("time range needs at least one step".into()));
        }
        Self::new(start, start + step_duration() * (n as i32 - 1))
    }

    pub fn n_steps(&self) -> usize {
        steps_between(&self.start, &self.end) as usize + 1
    }

    pub fn contains(&self, t: &Timestamp) -> bool {
        *t >= self.start && *t <= self.end
    }

    pub fn contains_range(&self, other: &TimeRange) -> bool {
        self.contains(&other.start) && self.contains(&other.end)
    }

    pub fn timestamp(&self, step: usize) -> Timestamp {
        self.start + step_duration() * step as i32
    }

    pub fn iter(&self) -> impl Iterator<Item = Timestamp> + '_ {
        (0..self.n_steps()).map(move |i| self.timestamp(i))
    }

    pub fn first_year(&self) -> i32 {
        self.start.year()
    }

    pub fn last_year(&self) -> i32 {
        self.end.year()
    }
}

/// Initial conditions at 00, 06, 12 and 18 UTC of every day in `range`,
/// keeping only those whose `horizon`-step target lies at or before
/// `data_end`.
pub fn sample_index(range: &TimeRange, horizon: usize, data_end: &Timestamp) -> Vec<Timestamp> {
    let reach = step_duration() * horizon as i32;
    range.iter().filter(|t| *t + reach <= *data_end).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replication_training_period_has_42368_samples() {
        let train = TimeRange::years(1979, 2007).unwrap();
        let data_end = ymd_h(2018, 12, 31, 18);
        assert_eq!(sample_index(&train, 1, &data_end).len(), 42368);
        assert_eq!(sample_index(&train, 4, &data_end).len(), 10592 * 4);
    }

    #[test]
    fn single_day_and_horizon_drop() {
        let day = TimeRange::new(ymd_h(1990, 3, 1, 0), ymd_h(1990, 3, 1, 18)).unwrap();
        let s = sample_index(&day, 1, &ymd_h(1990, 3, 2, 0));
        let hours: Vec<u32> = s.iter().map(|t| t.hour()).collect();
        assert_eq!(hours, [0, 6, 12, 18]);

        let train = TimeRange::years(1979, 2007).unwrap();
        // data ending with the range: the last four initial conditions lack a 4-step target
        let s = sample_index(&train, 4, &train.end);
        assert_eq!(s.len(), 42368 - 4);
        assert_eq!(*s.last().unwrap(), ymd_h(2007, 12, 30, 18));
    }

    #[test]
    fn ten_year_rollout_length() {
        let eval = TimeRange::years(2009, 2018).unwrap();
        assert_eq!(eval.n_steps(), 3652 * 4);
        assert_eq!(eval.n_steps(), 14608);
        assert_eq!(TimeRange::years(1980, 1980).unwrap().n_steps(), 366 * 4);
    }

    #[test]
    fn parsing_and_alignment() {
        assert_eq!(parse_timestamp("2009-01-01").unwrap(), ymd_h(2009, 1, 1, 0));
        assert_eq!(parse_timestamp("2009-01-01T18:00").unwrap(), ymd_h(2009, 1, 1, 18));
        assert!(parse_timestamp("yesterday").is_err());
        let bad = parse_timestamp("2009-01-01T03:00").unwrap();
        assert!(TimeRange::new(bad, ymd_h(2009, 1, 2, 0)).is_err());
        assert!(TimeRange::years(2000, 1999).is_err());
        let r = TimeRange::from_steps(ymd_h(2000, 2, 28, 18), 3).unwrap();
        assert_eq!(r.end, ymd_h(2000, 2, 29, 6));
        assert_eq!(format_timestamp(&r.end), "2000-02-29T06:00");
    }
}
