//! Calendar-indexed daily and monthly series and their aggregations.
//!
//! Dates are proleptic Gregorian (`chrono::NaiveDate`). Day windows count
//! calendar days, so a date absent from a series is treated exactly like a
//! date explicitly marked missing.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimeSeriesError {
    #[error("{variable}: month {month} has missing days")]
    IncompleteMonth { variable: String, month: YearMonth },
    #[error("{variable}: {window_days}-day window ending {end} has missing days")]
    IncompleteWindow { variable: String, end: NaiveDate, window_days: u32 },
    #[error("{variable}: no observation on {date}")]
    MissingObservation { variable: String, date: NaiveDate },
    #[error("non-finite value {value} on {key}")]
    NonFinite { key: String, value: f64 },
    #[error("duplicate key {0}")]
    Duplicate(String),
    #[error("window length must be positive")]
    EmptyWindow,
}

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Self {
        assert!((1..=12).contains(&month), "month out of range: {month}");
        Self { year, month }
    }

    pub fn of(date: NaiveDate) -> Self {
        Self { year: date.year(), month: date.month() }
    }

    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("valid month")
    }

    pub fn last_day(self) -> NaiveDate {
        self.next().first_day() - Duration::days(1)
    }

    pub fn days(self) -> u32 {
        self.last_day().day()
    }

    pub fn next(self) -> Self {
        self.add_months(1)
    }

    pub fn prev(self) -> Self {
        self.add_months(-1)
    }

    pub fn add_months(self, n: i32) -> Self {
        let idx = self.year * 12 + self.month as i32 - 1 + n;
        Self { year: idx.div_euclid(12), month: idx.rem_euclid(12) as u32 + 1 }
    }

    /// Iterates months from `self` through `end`, both inclusive.
    pub fn through(self, end: YearMonth) -> impl Iterator<Item = YearMonth> {
        let mut cur = self;
        std::iter::from_fn(move || {
            if cur > end {
                return None;
            }
            let out = cur;
            cur = cur.next();
            Some(out)
        })
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DailyVariable {
    /// Sea ice extent, 10^6 km^2.
    Sie,
    /// Sea ice thickness, m.
    Sit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MonthlyVariable {
    SieM,
    SitM,
    /// Deseasonalized CO2, ppm.
    Co2,
    /// Air temperature anomaly, degrees C.
    At,
}

impl fmt::Display for DailyVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DailyVariable::Sie => "SIE",
            DailyVariable::Sit => "SIT",
        })
    }
}

impl fmt::Display for MonthlyVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MonthlyVariable::SieM => "SIE_M",
            MonthlyVariable::SitM => "SIT_M",
            MonthlyVariable::Co2 => "CO2",
            MonthlyVariable::At => "AT",
        })
    }
}

/// Daily observations keyed by date. `None` marks a date known to be missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    variable: DailyVariable,
    entries: BTreeMap<NaiveDate, Option<f64>>,
}

impl DailySeries {
    pub fn new(variable: DailyVariable) -> Self {
        Self { variable, entries: BTreeMap::new() }
    }

    /// Builds a series from `(date, value)` pairs, rejecting duplicates and
    /// non-finite values.
    pub fn from_entries(
        variable: DailyVariable,
        entries: impl IntoIterator<Item = (NaiveDate, Option<f64>)>,
    ) -> Result<Self, TimeSeriesError> {
        let mut s = Self::new(variable);
        for (d, v) in entries {
            s.insert(d, v)?;
        }
        Ok(s)
    }

    pub fn insert(&mut self, date: NaiveDate, value: Option<f64>) -> Result<(), TimeSeriesError> {
        if let Some(v) = value {
            if !v.is_finite() {
                return Err(TimeSeriesError::NonFinite { key: date.to_string(), value: v });
            }
        }
        if self.entries.insert(date, value).is_some() {
            return Err(TimeSeriesError::Duplicate(date.to_string()));
        }
        Ok(())
    }

    pub fn variable(&self) -> DailyVariable {
        self.variable
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.entries.keys().next().copied()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.entries.keys().next_back().copied()
    }

    /// Value on `date`, if observed.
    #[inline]
    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.entries.get(&date).copied().flatten()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, Option<f64>)> + '_ {
        self.entries.iter().map(|(d, v)| (*d, *v))
    }

    /// Latest observed (non-missing) date on or before `date`.
    pub fn last_observed_on_or_before(&self, date: NaiveDate) -> Option<NaiveDate> {
        self.entries.range(..=date).rev().find(|(_, v)| v.is_some()).map(|(d, _)| *d)
    }

    /// Copy restricted to dates on or before `end`.
    pub fn truncated(&self, end: NaiveDate) -> Self {
        Self {
            variable: self.variable,
            entries: self.entries.range(..=end).map(|(d, v)| (*d, *v)).collect(),
        }
    }

    /// Replaces the value on `date` (inserting if absent).
    pub fn set(&mut self, date: NaiveDate, value: Option<f64>) {
        self.entries.insert(date, value);
    }
}

/// Monthly observations keyed by calendar month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySeries {
    variable: MonthlyVariable,
    entries: BTreeMap<YearMonth, f64>,
}

impl MonthlySeries {
    pub fn new(variable: MonthlyVariable) -> Self {
        Self { variable, entries: BTreeMap::new() }
    }

    pub fn from_entries(
        variable: MonthlyVariable,
        entries: impl IntoIterator<Item = (YearMonth, f64)>,
    ) -> Result<Self, TimeSeriesError> {
        let mut s = Self::new(variable);
        for (k, v) in entries {
            s.insert(k, v)?;
        }
        Ok(s)
    }

    pub fn insert(&mut self, key: YearMonth, value: f64) -> Result<(), TimeSeriesError> {
        if !value.is_finite() {
            return Err(TimeSeriesError::NonFinite { key: key.to_string(), value });
        }
        if self.entries.insert(key, value).is_some() {
            return Err(TimeSeriesError::Duplicate(key.to_string()));
        }
        Ok(())
    }

    pub fn variable(&self) -> MonthlyVariable {
        self.variable
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: YearMonth) -> Option<f64> {
        self.entries.get(&key).copied()
    }

    pub fn first_month(&self) -> Option<YearMonth> {
        self.entries.keys().next().copied()
    }

    pub fn last_month(&self) -> Option<YearMonth> {
        self.entries.keys().next_back().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (YearMonth, f64)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }

    pub fn set(&mut self, key: YearMonth, value: f64) {
        self.entries.insert(key, value);
    }
}

/// Fills isolated one-day gaps with the mean of the two adjacent days.
///
/// Only a missing day whose previous and next calendar days are both observed
/// is filled. Longer runs and gaps at either end stay missing.
pub fn fill_missing_daily(series: &DailySeries) -> DailySeries {
    let mut out = series.clone();
    let (Some(first), Some(last)) = (series.first_date(), series.last_date()) else {
        return out;
    };
    let mut d = first + Duration::days(1);
    while d < last {
        if series.get(d).is_none() {
            let prev = series.get(d - Duration::days(1));
            let next = series.get(d + Duration::days(1));
            if let (Some(a), Some(b)) = (prev, next) {
                out.set(d, Some((a + b) / 2.0));
            }
        }
        d += Duration::days(1);
    }
    out
}

/// Arithmetic mean of every day in `month`.
pub fn monthly_average(series: &DailySeries, month: YearMonth) -> Result<f64, TimeSeriesError> {
    trailing_mean(series, month.last_day(), month.days()).map_err(|_| TimeSeriesError::IncompleteMonth {
        variable: series.variable().to_string(),
        month,
    })
}

/// Mean over the `window_days` calendar days ending at `end` (inclusive).
pub fn trailing_mean(series: &DailySeries, end: NaiveDate, window_days: u32) -> Result<f64, TimeSeriesError> {
    if window_days == 0 {
        return Err(TimeSeriesError::EmptyWindow);
    }
    let start = end - Duration::days(window_days as i64 - 1);
    let mut sum = 0.0;
    let mut count = 0u32;
    for (_, v) in series.entries.range(start..=end) {
        match v {
            Some(v) => {
                sum += v;
                count += 1;
            }
            None => break,
        }
    }
    if count != window_days {
        return Err(TimeSeriesError::IncompleteWindow {
            variable: series.variable().to_string(),
            end,
            window_days,
        });
    }
    Ok(sum / window_days as f64)
}

/// Values for the `n` calendar days ending at `end`, most recent first.
pub fn daily_lags(series: &DailySeries, end: NaiveDate, n: u32) -> Result<Vec<f64>, TimeSeriesError> {
    (0..n)
        .map(|k| {
            let d = end - Duration::days(k as i64);
            series.get(d).ok_or_else(|| TimeSeriesError::IncompleteWindow {
                variable: series.variable().to_string(),
                end,
                window_days: n,
            })
        })
        .collect()
}

/// Most recent calendar month fully observed by the end of `asof`.
///
/// A month counts as complete once its last day is on or before `asof`:
/// daily data are available through the as-of day itself, so on June 30 the
/// June average is already known.
pub fn last_complete_month(asof: NaiveDate) -> YearMonth {
    let ym = YearMonth::of(asof);
    if asof == ym.last_day() {
        ym
    } else {
        ym.prev()
    }
}

/// Monthly averages of every complete month of `daily` from `from` through `through`.
/// Incomplete months are omitted.
pub fn monthly_from_daily(
    daily: &DailySeries,
    variable: MonthlyVariable,
    from: YearMonth,
    through: YearMonth,
) -> MonthlySeries {
    let mut out = MonthlySeries::new(variable);
    for ym in from.through(through) {
        if let Ok(v) = monthly_average(daily, ym) {
            out.set(ym, v);
        }
    }
    out
}
