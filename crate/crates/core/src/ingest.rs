//! Parsers for the four public source files and real-time data vintages.
//!
//! Sources:
//! - NSIDC Sea Ice Index v3 daily extent (CSV),
//! - PIOMAS daily thickness (gzipped whitespace table, year + day-of-year),
//! - Berkeley Earth land+ocean monthly anomalies (`%`-commented text),
//! - NOAA Mauna Loa monthly CO2 (`#`-commented CSV, `deseasonalized` column).

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use flate2::read::GzDecoder;
use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::{
    fill_missing_daily, last_complete_month, monthly_average, monthly_from_daily, DailySeries, DailyVariable, MonthlySeries,
    MonthlyVariable, TimeSeriesError, YearMonth,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{source_name}: malformed row at line {line}: {reason}")]
    MalformedRow { source_name: &'static str, line: usize, reason: String },
    #[error("{0}: no data rows")]
    EmptyFile(&'static str),
    #[error("gzip: {0}")]
    Gzip(String),
    #[error("line {line}: day of year {doy} out of range for {year}")]
    DayOfYearOutOfRange { line: usize, year: i32, doy: u32 },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("as-of date {asof} outside archive coverage {first}..{last}")]
    OutOfCoverage { asof: NaiveDate, first: NaiveDate, last: NaiveDate },
    #[error(transparent)]
    Series(#[from] TimeSeriesError),
    #[error("io error on {path}: {err}")]
    Io { path: String, err: std::io::Error },
    #[error("fetch {url}: {reason}")]
    Fetch { url: String, reason: String },
}

fn malformed(source_name: &'static str, line: usize, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedRow { source_name, line, reason: reason.into() }
}

fn starts_numeric(field: &str) -> bool {
    field.trim().parse::<i64>().is_ok()
}

/// Parses the NSIDC daily extent CSV.
///
/// Leading lines whose first field is not an integer are headers. A blank or
/// negative (sentinel) extent marks the date as missing.
pub fn parse_nsidc_sie(text: &str) -> Result<DailySeries, IngestError> {
    const SRC: &str = "NSIDC";
    let mut series = DailySeries::new(DailyVariable::Sie);
    let mut seen_data = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if !starts_numeric(fields[0]) {
            if seen_data {
                return Err(malformed(SRC, line, "non-numeric row after data began"));
            }
            debug!("NSIDC: skipping header line {line}");
            continue;
        }
        if fields.len() < 4 {
            return Err(malformed(SRC, line, format!("expected at least 4 fields, got {}", fields.len())));
        }
        let year: i32 = fields[0].parse().map_err(|_| malformed(SRC, line, "bad year"))?;
        let month: u32 = fields[1].parse().map_err(|_| malformed(SRC, line, "bad month"))?;
        let day: u32 = fields[2].parse().map_err(|_| malformed(SRC, line, "bad day"))?;
        let date = NaiveDate::from_ymd_opt(year, month, day)
            .ok_or_else(|| malformed(SRC, line, format!("invalid date {year}-{month}-{day}")))?;
        let value = match fields[3] {
            "" => None,
            f => {
                let v: f64 = f.parse().map_err(|_| malformed(SRC, line, format!("bad extent {f:?}")))?;
                if v.is_finite() && v >= 0.0 {
                    Some(v)
                } else {
                    None
                }
            }
        };
        series.insert(date, value).map_err(|e| malformed(SRC, line, e.to_string()))?;
        seen_data = true;
    }
    if !seen_data {
        return Err(IngestError::EmptyFile(SRC));
    }
    Ok(series)
}

/// Parses the gzipped PIOMAS daily thickness table (year, day-of-year, thickness).
pub fn parse_piomas_sit(bytes: &[u8]) -> Result<DailySeries, IngestError> {
    let mut text = String::new();
    GzDecoder::new(bytes).read_to_string(&mut text).map_err(|e| IngestError::Gzip(e.to_string()))?;
    parse_piomas_text(&text)
}

/// Parses an already decompressed PIOMAS table.
pub fn parse_piomas_text(text: &str) -> Result<DailySeries, IngestError> {
    const SRC: &str = "PIOMAS";
    let mut series = DailySeries::new(DailyVariable::Sit);
    let mut seen_data = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if !starts_numeric(fields[0]) {
            if seen_data {
                return Err(malformed(SRC, line, "non-numeric row after data began"));
            }
            debug!("PIOMAS: skipping header line {line}");
            continue;
        }
        if fields.len() < 3 {
            return Err(malformed(SRC, line, format!("expected 3 fields, got {}", fields.len())));
        }
        let year: i32 = fields[0].parse().map_err(|_| malformed(SRC, line, "bad year"))?;
        let doy: u32 = fields[1].parse().map_err(|_| malformed(SRC, line, "bad day of year"))?;
        let date = NaiveDate::from_yo_opt(year, doy).ok_or(IngestError::DayOfYearOutOfRange { line, year, doy })?;
        let v: f64 = fields[2].parse().map_err(|_| malformed(SRC, line, format!("bad thickness {:?}", fields[2])))?;
        let value = (v.is_finite() && v >= 0.0).then_some(v);
        series.insert(date, value).map_err(|e| malformed(SRC, line, e.to_string()))?;
        seen_data = true;
    }
    if !seen_data {
        return Err(IngestError::EmptyFile(SRC));
    }
    Ok(series)
}

/// Parses the Berkeley Earth monthly anomaly table.
///
/// Only the first table is read; the file carries a second variant (sea-ice
/// areas treated with water temperatures) whose keys restart, and parsing
/// stops at the first key that does not increase. Rows with a NaN anomaly
/// are skipped.
pub fn parse_berkeley_at(text: &str) -> Result<MonthlySeries, IngestError> {
    const SRC: &str = "BerkeleyEarth";
    let mut series = MonthlySeries::new(MonthlyVariable::At);
    let mut last: Option<YearMonth> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(malformed(SRC, line, format!("expected at least 3 fields, got {}", fields.len())));
        }
        let year: i32 = fields[0].parse().map_err(|_| malformed(SRC, line, "bad year"))?;
        let month: u32 = fields[1].parse().map_err(|_| malformed(SRC, line, "bad month"))?;
        if !(1..=12).contains(&month) {
            return Err(malformed(SRC, line, format!("month {month} out of range")));
        }
        let key = YearMonth::new(year, month);
        if last.is_some_and(|l| key <= l) {
            debug!("BerkeleyEarth: second table starts at line {line}, ignored");
            break;
        }
        last = Some(key);
        let v: f64 = fields[2].parse().map_err(|_| malformed(SRC, line, format!("bad anomaly {:?}", fields[2])))?;
        if !v.is_finite() {
            warn!("BerkeleyEarth: line {line} has non-finite anomaly, skipped");
            continue;
        }
        series.insert(key, v)?;
    }
    if series.is_empty() {
        return Err(IngestError::EmptyFile(SRC));
    }
    Ok(series)
}

/// Parses the NOAA Mauna Loa monthly CSV, reading the column named
/// `deseasonalized` (located by header name). Negative sentinels are skipped.
pub fn parse_noaa_co2(text: &str) -> Result<MonthlySeries, IngestError> {
    const SRC: &str = "NOAA";
    let mut series = MonthlySeries::new(MonthlyVariable::Co2);
    let mut columns: Option<(usize, usize, usize)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let Some((yc, mc, dc)) = columns else {
            let find = |name: &str| fields.iter().position(|f| f.eq_ignore_ascii_case(name));
            let dc = find("deseasonalized").ok_or_else(|| IngestError::MissingColumn("deseasonalized".into()))?;
            let yc = find("year").ok_or_else(|| IngestError::MissingColumn("year".into()))?;
            let mc = find("month").ok_or_else(|| IngestError::MissingColumn("month".into()))?;
            columns = Some((yc, mc, dc));
            continue;
        };
        let need = yc.max(mc).max(dc) + 1;
        if fields.len() < need {
            return Err(malformed(SRC, line, format!("expected at least {need} fields, got {}", fields.len())));
        }
        let year: i32 = fields[yc].parse().map_err(|_| malformed(SRC, line, "bad year"))?;
        let month: u32 = fields[mc].parse().map_err(|_| malformed(SRC, line, "bad month"))?;
        if !(1..=12).contains(&month) {
            return Err(malformed(SRC, line, format!("month {month} out of range")));
        }
        let v: f64 = fields[dc].parse().map_err(|_| malformed(SRC, line, format!("bad value {:?}", fields[dc])))?;
        if !v.is_finite() || v < 0.0 {
            warn!("NOAA: line {line} carries sentinel {v}, skipped");
            continue;
        }
        series.insert(YearMonth::new(year, month), v).map_err(|e| malformed(SRC, line, e.to_string()))?;
    }
    if columns.is_none() {
        return Err(IngestError::MissingColumn("deseasonalized".into()));
    }
    if series.is_empty() {
        return Err(IngestError::EmptyFile(SRC));
    }
    Ok(series)
}

/// Canonical two-column CSV for a daily series; missing days have an empty value.
pub fn daily_to_csv(series: &DailySeries) -> String {
    let mut out = String::from("date,value\n");
    for (d, v) in series.iter() {
        match v {
            Some(v) => out.push_str(&format!("{d},{v}\n")),
            None => out.push_str(&format!("{d},\n")),
        }
    }
    out
}

pub fn daily_from_csv(text: &str, variable: DailyVariable) -> Result<DailySeries, IngestError> {
    const SRC: &str = "canonical";
    let mut s = DailySeries::new(variable);
    for (idx, raw) in text.lines().enumerate().skip(1) {
        let line = idx + 1;
        let (d, v) = raw.split_once(',').ok_or_else(|| malformed(SRC, line, "expected date,value"))?;
        let date: NaiveDate = d.parse().map_err(|_| malformed(SRC, line, "bad date"))?;
        let value = if v.is_empty() { None } else { Some(v.parse().map_err(|_| malformed(SRC, line, "bad value"))?) };
        s.insert(date, value)?;
    }
    Ok(s)
}

pub fn monthly_to_csv(series: &MonthlySeries) -> String {
    let mut out = String::from("year,month,value\n");
    for (k, v) in series.iter() {
        out.push_str(&format!("{},{},{v}\n", k.year, k.month));
    }
    out
}

pub fn monthly_from_csv(text: &str, variable: MonthlyVariable) -> Result<MonthlySeries, IngestError> {
    const SRC: &str = "canonical";
    let mut s = MonthlySeries::new(variable);
    for (idx, raw) in text.lines().enumerate().skip(1) {
        let line = idx + 1;
        let f: Vec<&str> = raw.split(',').collect();
        if f.len() != 3 {
            return Err(malformed(SRC, line, "expected year,month,value"));
        }
        let y: i32 = f[0].parse().map_err(|_| malformed(SRC, line, "bad year"))?;
        let m: u32 = f[1].parse().map_err(|_| malformed(SRC, line, "bad month"))?;
        if !(1..=12).contains(&m) {
            return Err(malformed(SRC, line, "bad month"));
        }
        let v: f64 = f[2].parse().map_err(|_| malformed(SRC, line, "bad value"))?;
        s.insert(YearMonth::new(y, m), v)?;
    }
    Ok(s)
}

/// Downloads `url` into `dest` verbatim.
pub fn fetch_to_file(url: &str, dest: &Path) -> Result<(), IngestError> {
    let fetch_err = |reason: String| IngestError::Fetch { url: url.to_string(), reason };
    let resp = ureq::get(url).call().map_err(|e| fetch_err(e.to_string()))?;
    let mut body = Vec::new();
    resp.into_reader().read_to_end(&mut body).map_err(|e| fetch_err(e.to_string()))?;
    std::fs::write(dest, body).map_err(|err| IngestError::Io { path: dest.display().to_string(), err })
}

/// All four sources, with SIE single-day gaps already filled.
///
/// Monthly SIE and SIT averages are derived once here from the daily series.
#[derive(Debug, Clone, PartialEq)]
pub struct RawArchive {
    pub sie_daily: DailySeries,
    pub sit_daily: DailySeries,
    pub at_monthly: MonthlySeries,
    pub co2_monthly: MonthlySeries,
    sie_monthly: MonthlySeries,
    sit_monthly: MonthlySeries,
    /// SIE days whose value came from the adjacent-day fill.
    sie_filled: BTreeSet<NaiveDate>,
}

impl RawArchive {
    /// Assembles parsed sources, applying the adjacent-day fill to SIE.
    pub fn assemble(
        sie_raw: DailySeries,
        sit_daily: DailySeries,
        at_monthly: MonthlySeries,
        co2_monthly: MonthlySeries,
    ) -> Result<Self, IngestError> {
        let filled = fill_missing_daily(&sie_raw);
        let sie_filled = filled
            .iter()
            .filter(|(d, v)| v.is_some() && sie_raw.get(*d).is_none())
            .map(|(d, _)| d)
            .collect();
        let mut archive = Self::new(filled, sit_daily, at_monthly, co2_monthly)?;
        archive.sie_filled = sie_filled;
        Ok(archive)
    }

    /// Builds an archive from series taken as-is (no gap filling).
    pub fn new(
        sie_daily: DailySeries,
        sit_daily: DailySeries,
        at_monthly: MonthlySeries,
        co2_monthly: MonthlySeries,
    ) -> Result<Self, IngestError> {
        let (Some(s0), Some(s1)) = (sie_daily.first_date(), sie_daily.last_date()) else {
            return Err(IngestError::EmptyFile("SIE"));
        };
        if sit_daily.is_empty() {
            return Err(IngestError::EmptyFile("SIT"));
        }
        if at_monthly.is_empty() {
            return Err(IngestError::EmptyFile("AT"));
        }
        if co2_monthly.is_empty() {
            return Err(IngestError::EmptyFile("CO2"));
        }
        let sie_monthly = monthly_from_daily(&sie_daily, MonthlyVariable::SieM, YearMonth::of(s0), YearMonth::of(s1));
        let t0 = sit_daily.first_date().expect("nonempty");
        let t1 = sit_daily.last_date().expect("nonempty");
        let sit_monthly = monthly_from_daily(&sit_daily, MonthlyVariable::SitM, YearMonth::of(t0), YearMonth::of(t1));
        Ok(Self { sie_daily, sit_daily, at_monthly, co2_monthly, sie_monthly, sit_monthly, sie_filled: BTreeSet::new() })
    }

    pub fn monthly(&self, var: MonthlyVariable) -> &MonthlySeries {
        match var {
            MonthlyVariable::SieM => &self.sie_monthly,
            MonthlyVariable::SitM => &self.sit_monthly,
            MonthlyVariable::Co2 => &self.co2_monthly,
            MonthlyVariable::At => &self.at_monthly,
        }
    }

    pub fn daily(&self, var: DailyVariable) -> &DailySeries {
        match var {
            DailyVariable::Sie => &self.sie_daily,
            DailyVariable::Sit => &self.sit_daily,
        }
    }

    /// SIE days filled from their neighbours by [`RawArchive::assemble`].
    pub fn filled_days(&self) -> &BTreeSet<NaiveDate> {
        &self.sie_filled
    }

    pub fn coverage(&self) -> (NaiveDate, NaiveDate) {
        (self.sie_daily.first_date().expect("nonempty"), self.sie_daily.last_date().expect("nonempty"))
    }
}

/// Publication lags, in months behind the as-of month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagConfig {
    pub sit_months: u32,
    pub co2_months: u32,
    pub at_months: u32,
}

impl Default for LagConfig {
    fn default() -> Self {
        Self { sit_months: 2, co2_months: 3, at_months: 4 }
    }
}

/// Information set on `asof`: a borrowed view of the archive with every
/// variable cut at its own availability horizon.
#[derive(Debug, Clone, Copy)]
pub struct VintageSnapshot<'a> {
    archive: &'a RawArchive,
    asof: NaiveDate,
    lags: LagConfig,
}

/// Snapshot of `archive` as it would have been known on `asof`.
pub fn vintage_view(archive: &RawArchive, asof: NaiveDate, lags: LagConfig) -> Result<VintageSnapshot<'_>, IngestError> {
    let (first, last) = archive.coverage();
    if asof < first || asof > last {
        return Err(IngestError::OutOfCoverage { asof, first, last });
    }
    Ok(VintageSnapshot { archive, asof, lags })
}

impl<'a> VintageSnapshot<'a> {
    pub fn asof(&self) -> NaiveDate {
        self.asof
    }

    pub fn lags(&self) -> LagConfig {
        self.lags
    }

    /// Last month of `var` visible on the as-of date.
    pub fn visible_through(&self, var: MonthlyVariable) -> YearMonth {
        let m = YearMonth::of(self.asof);
        match var {
            MonthlyVariable::SieM => last_complete_month(self.asof),
            MonthlyVariable::SitM => m.add_months(-(self.lags.sit_months as i32)),
            MonthlyVariable::Co2 => m.add_months(-(self.lags.co2_months as i32)),
            MonthlyVariable::At => m.add_months(-(self.lags.at_months as i32)),
        }
    }

    /// Last visible calendar day of a daily variable.
    pub fn daily_visible_through(&self, var: DailyVariable) -> NaiveDate {
        match var {
            DailyVariable::Sie => self.asof,
            DailyVariable::Sit => self.visible_through(MonthlyVariable::SitM).last_day(),
        }
    }

    /// A filled as-of day would borrow tomorrow's extent; on that day only
    /// yesterday is known, so its value is carried forward instead.
    fn edge_patch(&self, var: DailyVariable) -> Option<f64> {
        if var != DailyVariable::Sie || !self.archive.sie_filled.contains(&self.asof) {
            return None;
        }
        self.archive.sie_daily.get(self.asof - Duration::days(1))
    }

    fn patched_series(&self, var: DailyVariable) -> Option<DailySeries> {
        let v = self.edge_patch(var)?;
        let mut s = self.archive.daily(var).truncated(self.asof);
        s.set(self.asof, Some(v));
        Some(s)
    }

    pub fn daily(&self, var: DailyVariable, date: NaiveDate) -> Option<f64> {
        if date > self.daily_visible_through(var) {
            return None;
        }
        if date == self.asof {
            if let Some(v) = self.edge_patch(var) {
                return Some(v);
            }
        }
        self.archive.daily(var).get(date)
    }

    pub fn monthly(&self, var: MonthlyVariable, month: YearMonth) -> Option<f64> {
        if month > self.visible_through(var) {
            return None;
        }
        if var == MonthlyVariable::SieM && month.last_day() == self.asof {
            if let Some(s) = self.patched_series(DailyVariable::Sie) {
                return monthly_average(&s, month).ok();
            }
        }
        self.archive.monthly(var).get(month)
    }

    /// Mean of a daily variable over `window_days` ending at `end`; fails if
    /// any of those days is not yet visible.
    pub fn trailing_mean(&self, var: DailyVariable, end: NaiveDate, window_days: u32) -> Result<f64, TimeSeriesError> {
        if end > self.daily_visible_through(var) {
            return Err(TimeSeriesError::IncompleteWindow { variable: var.to_string(), end, window_days });
        }
        if end == self.asof {
            if let Some(s) = self.patched_series(var) {
                return crate::timeseries::trailing_mean(&s, end, window_days);
            }
        }
        crate::timeseries::trailing_mean(self.archive.daily(var), end, window_days)
    }

    /// `n` visible daily values ending at `end`, most recent first.
    pub fn daily_lags(&self, var: DailyVariable, end: NaiveDate, n: u32) -> Result<Vec<f64>, TimeSeriesError> {
        if end > self.daily_visible_through(var) {
            return Err(TimeSeriesError::IncompleteWindow { variable: var.to_string(), end, window_days: n });
        }
        if end == self.asof {
            if let Some(s) = self.patched_series(var) {
                return crate::timeseries::daily_lags(&s, end, n);
            }
        }
        crate::timeseries::daily_lags(self.archive.daily(var), end, n)
    }

    /// Truncated copy of a daily series.
    pub fn daily_series(&self, var: DailyVariable) -> DailySeries {
        self.patched_series(var)
            .unwrap_or_else(|| self.archive.daily(var).truncated(self.daily_visible_through(var)))
    }

    /// Every visible observation as `(variable, observation date, value)`;
    /// monthly observations are dated by the last day of their month.
    pub fn visible_observations(&self) -> Vec<(String, NaiveDate, f64)> {
        let mut out = Vec::new();
        for var in [DailyVariable::Sie, DailyVariable::Sit] {
            for (d, v) in self.daily_series(var).iter() {
                if let Some(v) = v {
                    out.push((var.to_string(), d, v));
                }
            }
        }
        for var in [MonthlyVariable::SieM, MonthlyVariable::SitM, MonthlyVariable::Co2, MonthlyVariable::At] {
            let end = self.visible_through(var);
            for (k, _) in self.archive.monthly(var).iter().take_while(|(k, _)| *k <= end) {
                if let Some(v) = self.monthly(var, k) {
                    out.push((var.to_string(), k.last_day(), v));
                }
            }
        }
        out
    }
}

/// Date on which an observation of `var` dated `obs` becomes public under `lags`.
pub fn availability_date(var: &str, obs: NaiveDate, lags: LagConfig) -> NaiveDate {
    let m = YearMonth::of(obs);
    match var {
        "SIE" => obs,
        "SIE_M" => m.last_day(),
        "SIT" | "SIT_M" => m.add_months(lags.sit_months as i32).first_day(),
        "CO2" => m.add_months(lags.co2_months as i32).first_day(),
        "AT" => m.add_months(lags.at_months as i32).first_day(),
        other => panic!("unknown variable {other}"),
    }
}

/// Reads a file, tagging errors with the path.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>, IngestError> {
    std::fs::read(path).map_err(|err| IngestError::Io { path: path.display().to_string(), err })
}

pub fn read_text(path: &Path) -> Result<String, IngestError> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        err: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}
