//! CDR parsing and one-pass reduction to per user, period and tower
//! activity summaries.

mod aggregate;
mod parse;
mod persist;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, Utc};

use crate::error::{Error, Result};

pub use aggregate::{aggregate, aggregate_parallel, ingest_reader, Aggregation, Aggregator};
pub use parse::{format_timestamp, parse_cdr, parse_timestamp, write_cdr_csv, CdrReader, CDR_HEADER};
pub(crate) use parse::push_cdr_line;
pub use persist::{read_aggregates_csv, write_aggregates_csv, AggregatesFile, AGGREGATES_HEADER};

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Incoming,
    Outgoing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Call,
    Text,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Incoming => "incoming",
            Direction::Outgoing => "outgoing",
        }
    }
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Call => "call",
            Kind::Text => "text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CdrRecord {
    pub user_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub ts: i64,
    pub tower_id: String,
    pub direction: Direction,
    pub kind: Kind,
}

/// Fixed offset from UTC to local civil time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TzOffset(i32);

impl TzOffset {
    pub fn from_hours(hours: f64) -> Result<Self> {
        if !hours.is_finite() || hours.abs() > 14.0 {
            return Err(Error::InvalidParameter(format!("tz offset {hours} h out of range")));
        }
        Ok(Self((hours * 3600.0).round() as i32))
    }

    pub fn from_seconds(s: i32) -> Self {
        Self(s)
    }

    pub fn seconds(self) -> i32 {
        self.0
    }

    pub fn to_local(self, ts: i64) -> i64 {
        ts + self.0 as i64
    }

    /// Local calendar day number (days since 1970-01-01 local).
    pub fn local_day(self, ts: i64) -> i32 {
        self.to_local(ts).div_euclid(SECONDS_PER_DAY) as i32
    }

    pub fn local_second_of_day(self, ts: i64) -> u32 {
        self.to_local(ts).rem_euclid(SECONDS_PER_DAY) as u32
    }
}

impl Default for TzOffset {
    /// Central European Summer Time.
    fn default() -> Self {
        Self(2 * 3600)
    }
}

/// Half-open local time-of-day interval `[start, end)`, wrapping past
/// midnight when `start > end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NightWindow {
    start_s: u32,
    end_s: u32,
}

impl NightWindow {
    pub fn new(start_s: u32, end_s: u32) -> Result<Self> {
        if start_s >= 86_400 || end_s >= 86_400 || start_s == end_s {
            return Err(Error::InvalidParameter(format!(
                "invalid time window {start_s}s-{end_s}s"
            )));
        }
        Ok(Self { start_s, end_s })
    }

    pub fn contains(&self, second_of_day: u32) -> bool {
        if self.start_s < self.end_s {
            (self.start_s..self.end_s).contains(&second_of_day)
        } else {
            second_of_day >= self.start_s || second_of_day < self.end_s
        }
    }

    pub fn start_s(&self) -> u32 {
        self.start_s
    }

    pub fn end_s(&self) -> u32 {
        self.end_s
    }

    /// Window length in seconds.
    pub fn len_s(&self) -> u32 {
        (self.end_s + 86_400 - self.start_s) % 86_400
    }
}

impl Default for NightWindow {
    fn default() -> Self {
        Self {
            start_s: 19 * 3600,
            end_s: 9 * 3600,
        }
    }
}

fn parse_hhmm(s: &str) -> Option<u32> {
    let (h, m) = s.trim().split_once(':')?;
    let (h, m): (u32, u32) = (h.parse().ok()?, m.parse().ok()?);
    (h < 24 && m < 60).then_some(h * 3600 + m * 60)
}

impl FromStr for NightWindow {
    type Err = Error;

    /// `HH:MM-HH:MM`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("invalid window `{s}`, expected HH:MM-HH:MM"));
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        Self::new(parse_hhmm(a).ok_or_else(bad)?, parse_hhmm(b).ok_or_else(bad)?)
    }
}

impl fmt::Display for NightWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hm = |s: u32| format!("{:02}:{:02}", s / 3600, (s % 3600) / 60);
        write!(f, "{}-{}", hm(self.start_s), hm(self.end_s))
    }
}

/// Everything that turns raw timestamps into local window and calendar-day
/// decisions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AggregateConfig {
    pub tz: TzOffset,
    pub window: NightWindow,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Period {
    pub label: String,
    /// Inclusive UTC start, epoch seconds.
    pub start: i64,
    /// Exclusive UTC end, epoch seconds.
    pub end: i64,
}

impl Period {
    pub fn new(label: impl Into<String>, start: i64, end: i64) -> Result<Self> {
        let label = label.into();
        if start >= end {
            return Err(Error::InvalidPeriod(format!("`{label}`: start must precede end")));
        }
        if label.is_empty() || label.contains(',') {
            return Err(Error::InvalidPeriod(format!("bad label `{label}`")));
        }
        Ok(Self { label, start, end })
    }

    /// The local calendar month `year-month`, labelled `YYYY-MM`.
    pub fn calendar_month(year: i32, month: u32, tz: TzOffset) -> Result<Self> {
        let first = NaiveDate::from_ymd_opt(year, month, 1)
            .ok_or_else(|| Error::InvalidPeriod(format!("{year}-{month:02}")))?;
        let next = if month == 12 {
            NaiveDate::from_ymd_opt(year + 1, 1, 1)
        } else {
            NaiveDate::from_ymd_opt(year, month + 1, 1)
        }
        .unwrap();
        let at = |d: NaiveDate| d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp() - tz.seconds() as i64;
        Self::new(format!("{year:04}-{month:02}"), at(first), at(next))
    }

    pub fn contains(&self, ts: i64) -> bool {
        self.start <= ts && ts < self.end
    }

    /// Number of local calendar dates the period touches.
    pub fn n_days(&self, tz: TzOffset) -> u32 {
        (tz.local_day(self.end - 1) - tz.local_day(self.start) + 1) as u32
    }

    pub fn start_utc(&self) -> DateTime<Utc> {
        DateTime::from_timestamp(self.start, 0).unwrap()
    }

    pub fn end_utc(&self) -> DateTime<Utc> {
        DateTime::from_timestamp(self.end, 0).unwrap()
    }
}

/// Non-overlapping periods sorted by start.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PeriodSet {
    periods: Vec<Period>,
}

impl PeriodSet {
    pub fn new(mut periods: Vec<Period>) -> Result<Self> {
        periods.sort_by_key(|p| p.start);
        for w in periods.windows(2) {
            if w[1].start < w[0].end {
                return Err(Error::InvalidPeriod(format!(
                    "`{}` overlaps `{}`",
                    w[0].label, w[1].label
                )));
            }
        }
        let mut labels: Vec<&str> = periods.iter().map(|p| p.label.as_str()).collect();
        labels.sort_unstable();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidPeriod(format!("duplicate label `{}`", w[0])));
        }
        Ok(Self { periods })
    }

    /// Calendar months from `from` to `to` inclusive.
    pub fn months(from: (i32, u32), to: (i32, u32), tz: TzOffset) -> Result<Self> {
        let mut out = Vec::new();
        let (mut y, mut m) = from;
        while (y, m) <= to {
            out.push(Period::calendar_month(y, m, tz)?);
            if m == 12 {
                y += 1;
                m = 1;
            } else {
                m += 1;
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidPeriod("empty month range".into()));
        }
        Self::new(out)
    }

    /// Parses a comma-separated list of `YYYY-MM` months or `YYYY-MM..YYYY-MM`
    /// ranges.
    pub fn parse_months(spec: &str, tz: TzOffset) -> Result<Self> {
        let ym = |s: &str| -> Result<(i32, u32)> {
            let bad = || Error::InvalidPeriod(format!("`{s}`: expected YYYY-MM"));
            let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
            let y: i32 = y.parse().map_err(|_| bad())?;
            let m: u32 = m.parse().map_err(|_| bad())?;
            if !(1..=12).contains(&m) {
                return Err(bad());
            }
            Ok((y, m))
        };
        let mut out = Vec::new();
        for item in spec.split(',').filter(|s| !s.trim().is_empty()) {
            match item.split_once("..") {
                Some((a, b)) => out.extend(Self::months(ym(a)?, ym(b)?, tz)?.periods),
                None => {
                    let (y, m) = ym(item)?;
                    out.push(Period::calendar_month(y, m, tz)?);
                }
            }
        }
        Self::new(out)
    }

    /// Restricts every period to `[start, end)`, dropping those left empty.
    /// Partial first and last months keep their labels.
    pub fn clip(&self, start: i64, end: i64) -> Result<Self> {
        let periods = self
            .periods
            .iter()
            .filter_map(|p| {
                let (s, e) = (p.start.max(start), p.end.min(end));
                (s < e).then(|| Period {
                    label: p.label.clone(),
                    start: s,
                    end: e,
                })
            })
            .collect();
        Self::new(periods)
    }

    pub fn len(&self) -> usize {
        self.periods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Period {
        &self.periods[idx]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Period> {
        self.periods.iter()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.periods.iter().position(|p| p.label == label)
    }

    /// Index of the period containing `ts`.
    pub fn find(&self, ts: i64) -> Option<usize> {
        let i = self.periods.partition_point(|p| p.start <= ts);
        (i > 0 && self.periods[i - 1].contains(ts)).then(|| i - 1)
    }
}

/// Local date (YYYY-MM-DD) of a day number produced by [`TzOffset::local_day`].
pub fn day_to_date(day: i32) -> NaiveDate {
    NaiveDate::from_num_days_from_ce_opt(day + 719_163).unwrap()
}

/// Day number of a local date, the inverse of [`day_to_date`].
pub fn date_to_day(d: NaiveDate) -> i32 {
    d.num_days_from_ce() - 719_163
}

/// Per-tower counts for one user and period, after distinct-day sets have
/// been collapsed to their cardinalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TowerActivity {
    /// Index into the tower network.
    pub tower: u32,
    pub n_total: u32,
    pub n_window: u32,
    pub n_days_total: u32,
    pub n_days_window: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActivitySummary {
    pub user_id: String,
    /// Index into the study's [`PeriodSet`].
    pub period: usize,
    /// Ascending by tower index.
    pub towers: Vec<TowerActivity>,
}

impl ActivitySummary {
    pub fn total_records(&self) -> u64 {
        self.towers.iter().map(|t| t.n_total as u64).sum()
    }

    pub fn window_records(&self) -> u64 {
        self.towers.iter().map(|t| t.n_window as u64).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub rows_read: u64,
    pub rows_ok: u64,
    pub rows_malformed: u64,
    pub rows_unknown_tower: u64,
    pub rows_out_of_window: u64,
}

impl IngestReport {
    pub fn reconciles(&self) -> bool {
        self.rows_read
            == self.rows_ok + self.rows_malformed + self.rows_unknown_tower + self.rows_out_of_window
    }
}
