//! Feature engineering: the linear part `X` and the state set `S` for each
//! model, target month and horizon, one row per year.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{vintage_view, IngestError, LagConfig, RawArchive, VintageSnapshot};
use crate::linalg::Matrix;
use crate::pca::{pca_scores, PcaError, PcaModel};
use crate::scalar::Scalar;
use crate::timeseries::{DailyVariable, MonthlyVariable, TimeSeriesError, YearMonth};

pub const INTERCEPT: &str = "c";
pub const TIME: &str = "Time";
pub const SIE_LAST_MONTH: &str = "SIE_LastMonth";
pub const SIE_LAST_30_DAYS: &str = "SIE_Last30Days";
pub const SIE_TODAY: &str = "SIE_Today";

/// Number of principal components appended to the full state set.
pub const N_PRINCIPAL_COMPONENTS: usize = 5;
/// Daily lags of SIE and SIT in the state set.
pub const N_DAILY_LAGS: u32 = 14;

/// Year index used for the trend regressor.
pub fn time_index(year: i32) -> f64 {
    (year - 1978) as f64
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Series(#[from] TimeSeriesError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error("no usable years for month {month}, horizon {horizon}: {reasons}")]
    NoUsableYears { month: u32, horizon: u32, reasons: String },
    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    /// Features removed by the collinearity rule.
    pub dropped: Vec<String>,
}

impl FeatureRow {
    fn push(&mut self, name: impl Into<String>, value: f64) {
        self.names.push(name.into());
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    /// Values reordered to `names`; fails if any name is absent.
    pub fn aligned(&self, names: &[String]) -> Result<Vec<f64>, FeatureError> {
        names
            .iter()
            .map(|n| self.get(n).ok_or_else(|| FeatureError::FeatureMismatch(format!("row lacks feature {n}"))))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    LinearTrend,
    Felr,
    PocketFelr,
    Feml,
    PocketFeml,
    FemlSeqX,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::LinearTrend,
        ModelKind::Felr,
        ModelKind::PocketFelr,
        ModelKind::Feml,
        ModelKind::PocketFeml,
        ModelKind::FemlSeqX,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ModelKind::LinearTrend => "LinearTrend",
            ModelKind::Felr => "FELR",
            ModelKind::PocketFelr => "PocketFELR",
            ModelKind::Feml => "FEML",
            ModelKind::PocketFeml => "PocketFEML",
            ModelKind::FemlSeqX => "FEML_SeqX",
        }
    }

    pub fn is_forest(self) -> bool {
        matches!(self, ModelKind::Feml | ModelKind::PocketFeml | ModelKind::FemlSeqX)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ModelKind {
    type Err = FeatureError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.id().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| FeatureError::UnknownModel(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearPart {
    /// `c, Time`
    Trend,
    /// `c, Time, SIE_LastMonth, SIE_Last30Days, SIE_Today`
    Felr,
    /// `c, Time, SIE_Today`
    Pocket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatePart {
    /// No forest; `S` mirrors `X`.
    None,
    /// Daily and monthly lags plus principal components.
    Full,
    /// `S` restricted to the columns of `X`.
    SameAsX,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub linear_features: LinearPart,
    pub state_features: StatePart,
}

impl ModelSpec {
    pub fn of(kind: ModelKind) -> Self {
        let (linear_features, state_features) = match kind {
            ModelKind::LinearTrend => (LinearPart::Trend, StatePart::None),
            ModelKind::Felr => (LinearPart::Felr, StatePart::None),
            ModelKind::PocketFelr => (LinearPart::Pocket, StatePart::None),
            ModelKind::Feml => (LinearPart::Felr, StatePart::Full),
            ModelKind::PocketFeml => (LinearPart::Pocket, StatePart::Full),
            ModelKind::FemlSeqX => (LinearPart::Felr, StatePart::SameAsX),
        };
        Self { kind, linear_features, state_features }
    }
}

fn missing_today(date: NaiveDate) -> TimeSeriesError {
    TimeSeriesError::MissingObservation { variable: "SIE".into(), date }
}

fn last_month_value(snapshot: &VintageSnapshot<'_>) -> Result<(YearMonth, f64), TimeSeriesError> {
    let month = snapshot.visible_through(MonthlyVariable::SieM);
    let v = snapshot
        .monthly(MonthlyVariable::SieM, month)
        .ok_or_else(|| TimeSeriesError::IncompleteMonth { variable: "SIE".into(), month })?;
    Ok((month, v))
}

/// `[c, Time, SIE_LastMonth, SIE_Last30Days, SIE_Today]` on the snapshot's
/// as-of date. `SIE_Last30Days` is dropped when its window is exactly the
/// last complete month.
pub fn felr_row(snapshot: &VintageSnapshot<'_>, target: YearMonth) -> Result<FeatureRow, FeatureError> {
    let asof = snapshot.asof();
    let (last_month, last_value) = last_month_value(snapshot)?;
    let last30 = snapshot.trailing_mean(DailyVariable::Sie, asof, 30)?;
    let today = snapshot.daily(DailyVariable::Sie, asof).ok_or_else(|| missing_today(asof))?;

    let mut row = FeatureRow { names: Vec::new(), values: Vec::new(), dropped: Vec::new() };
    row.push(INTERCEPT, 1.0);
    row.push(TIME, time_index(target.year));
    row.push(SIE_LAST_MONTH, last_value);
    if asof == last_month.last_day() && last_month.days() == 30 {
        row.dropped.push(SIE_LAST_30_DAYS.into());
    } else {
        row.push(SIE_LAST_30_DAYS, last30);
    }
    row.push(SIE_TODAY, today);
    Ok(row)
}

/// `[c, Time, SIE_Today]`.
pub fn pocket_row(snapshot: &VintageSnapshot<'_>, target: YearMonth) -> Result<FeatureRow, FeatureError> {
    let asof = snapshot.asof();
    let today = snapshot.daily(DailyVariable::Sie, asof).ok_or_else(|| missing_today(asof))?;
    let mut row = FeatureRow { names: Vec::new(), values: Vec::new(), dropped: Vec::new() };
    row.push(INTERCEPT, 1.0);
    row.push(TIME, time_index(target.year));
    row.push(SIE_TODAY, today);
    Ok(row)
}

/// `[c, Time]`.
pub fn trend_row(target: YearMonth) -> FeatureRow {
    FeatureRow { names: vec![INTERCEPT.into(), TIME.into()], values: vec![1.0, time_index(target.year)], dropped: Vec::new() }
}

/// Name of a monthly lag column; the year is relative to the as-of year.
pub fn monthly_lag_name(var: MonthlyVariable, asof_year: i32, month: YearMonth) -> String {
    match month.year - asof_year {
        0 => format!("{var}_t_{:02}", month.month),
        off => format!("{var}_t{off}_{:02}", month.month),
    }
}

/// State set before principal components: FELR features, 14 daily SIE
/// values ending on the as-of date, the latest 14 visible daily SIT values
/// and their 30-day mean, and monthly lags of SIE, SIT, CO2 and AT from
/// January of the previous year through each variable's visible end.
pub fn state_row(snapshot: &VintageSnapshot<'_>, target: YearMonth) -> Result<FeatureRow, FeatureError> {
    let asof = snapshot.asof();
    let mut row = felr_row(snapshot, target)?;

    let sie = snapshot.daily_lags(DailyVariable::Sie, asof, N_DAILY_LAGS)?;
    for (k, v) in sie.into_iter().enumerate() {
        row.push(format!("SIE_D{k}"), v);
    }
    let sit_end = snapshot.daily_visible_through(DailyVariable::Sit);
    let sit = snapshot.daily_lags(DailyVariable::Sit, sit_end, N_DAILY_LAGS)?;
    for (k, v) in sit.into_iter().enumerate() {
        row.push(format!("SIT_D{k}"), v);
    }
    row.push("SIT_Last30Days", snapshot.trailing_mean(DailyVariable::Sit, sit_end, 30)?);

    let start = YearMonth::new(asof.year() - 1, 1);
    for var in [MonthlyVariable::SieM, MonthlyVariable::SitM, MonthlyVariable::Co2, MonthlyVariable::At] {
        for month in start.through(snapshot.visible_through(var)) {
            let v = snapshot
                .monthly(var, month)
                .ok_or_else(|| TimeSeriesError::IncompleteMonth { variable: var.to_string(), month })?;
            row.push(monthly_lag_name(var, asof.year(), month), v);
        }
    }
    Ok(row)
}

/// How the as-of date is placed relative to the target month.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsofRule {
    /// `horizon` days before the last day of the target month.
    Horizon(u32),
    /// A fixed calendar day: the latest such day on or before the end of the target month.
    CalendarDay { month: u32, day: u32 },
}

impl AsofRule {
    pub fn asof_for(self, target: YearMonth) -> NaiveDate {
        let end = target.last_day();
        match self {
            AsofRule::Horizon(h) => end - Duration::days(h as i64),
            AsofRule::CalendarDay { month, day } => {
                let here = NaiveDate::from_ymd_opt(target.year, month, day)
                    .or_else(|| NaiveDate::from_ymd_opt(target.year, month, day - 1))
                    .expect("valid calendar day");
                if here <= end {
                    here
                } else {
                    NaiveDate::from_ymd_opt(target.year - 1, month, day)
                        .or_else(|| NaiveDate::from_ymd_opt(target.year - 1, month, day - 1))
                        .expect("valid calendar day")
                }
            }
        }
    }
}

/// Features of one year before any cross-year alignment or PCA.
#[derive(Debug, Clone, PartialEq)]
pub struct YearRow {
    pub year: i32,
    pub asof: NaiveDate,
    pub x: FeatureRow,
    pub s: FeatureRow,
    /// Realized target-month average, when the archive covers the whole month.
    pub realized: Option<f64>,
}

/// Target-month average as first known at the end of that month.
pub fn realized_target(archive: &RawArchive, target: YearMonth, lags: LagConfig) -> Option<f64> {
    vintage_view(archive, target.last_day(), lags).ok()?.monthly(MonthlyVariable::SieM, target)
}

/// Builds the raw `X`/`S` rows for a single year.
pub fn year_row(
    archive: &RawArchive,
    spec: &ModelSpec,
    target: YearMonth,
    rule: AsofRule,
    lags: LagConfig,
) -> Result<YearRow, FeatureError> {
    let asof = rule.asof_for(target);
    let snapshot = vintage_view(archive, asof, lags)?;
    let x = match spec.linear_features {
        LinearPart::Trend => trend_row(target),
        LinearPart::Felr => felr_row(&snapshot, target)?,
        LinearPart::Pocket => pocket_row(&snapshot, target)?,
    };
    let s = match spec.state_features {
        StatePart::None | StatePart::SameAsX => x.clone(),
        StatePart::Full => {
            let mut s = state_row(&snapshot, target)?;
            // The pocket linear part is a subset of the FELR features already in S.
            for (n, v) in x.names.iter().zip(&x.values) {
                if s.get(n).is_none() {
                    s.push(n.clone(), *v);
                }
            }
            s
        }
    };
    let realized = realized_target(archive, target, lags);
    Ok(YearRow { year: target.year, asof, x, s, realized })
}

/// Training matrix for one (model, target month, horizon): one row per year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dataset<T> {
    pub target_month: u32,
    pub horizon_days: u32,
    pub years: Vec<i32>,
    pub asof_dates: Vec<NaiveDate>,
    pub x_names: Vec<String>,
    pub s_names: Vec<String>,
    pub x: Matrix<T>,
    pub s: Matrix<T>,
    pub y: Vec<T>,
    /// Years left out, with the reason.
    pub excluded: Vec<(i32, String)>,
    /// Projection used for the principal-component state columns, if any.
    pub pca: Option<PcaModel<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_x(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_s(&self) -> usize {
        self.s.ncols()
    }

    /// Converts every numeric field to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        let conv = |v: T| U::of(v.as_f64());
        Dataset {
            target_month: self.target_month,
            horizon_days: self.horizon_days,
            years: self.years.clone(),
            asof_dates: self.asof_dates.clone(),
            x_names: self.x_names.clone(),
            s_names: self.s_names.clone(),
            x: self.x.map(conv),
            s: self.s.map(conv),
            y: self.y.iter().map(|&v| conv(v)).collect(),
            excluded: self.excluded.clone(),
            pca: None,
        }
    }

    /// Header row plus one line per year: `year,asof_date,y,X:...,S:...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("year,asof_date,y");
        for n in &self.x_names {
            out.push_str(&format!(",X:{n}"));
        }
        for n in &self.s_names {
            out.push_str(&format!(",S:{n}"));
        }
        out.push('\n');
        for i in 0..self.n_rows() {
            out.push_str(&format!("{},{},{}", self.years[i], self.asof_dates[i], self.y[i]));
            for v in self.x.row(i).iter().chain(self.s.row(i)) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// A held-out year aligned to a training dataset's columns.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutRow {
    pub year: i32,
    pub asof: NaiveDate,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub realized: Option<f64>,
}

fn common_names(rows: &[&FeatureRow]) -> Vec<String> {
    let Some(first) = rows.first() else { return Vec::new() };
    let sets: Vec<HashSet<&str>> = rows.iter().map(|r| r.names.iter().map(String::as_str).collect()).collect();
    first.names.iter().filter(|n| sets.iter().all(|s| s.contains(n.as_str()))).cloned().collect()
}

fn collect_rows(
    archive: &RawArchive,
    spec: &ModelSpec,
    target_month: u32,
    rule: AsofRule,
    years: &[i32],
    lags: LagConfig,
) -> (Vec<YearRow>, Vec<(i32, String)>) {
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for &year in years {
        match year_row(archive, spec, YearMonth::new(year, target_month), rule, lags) {
            Ok(r) if r.realized.is_some() => rows.push(r),
            Ok(_) => excluded.push((year, "target month incomplete".to_string())),
            Err(e) => excluded.push((year, e.to_string())),
        }
    }
    (rows, excluded)
}

fn assemble(
    spec: &ModelSpec,
    target_month: u32,
    horizon_days: u32,
    rows: Vec<YearRow>,
    excluded: Vec<(i32, String)>,
) -> Result<Dataset<f64>, FeatureError> {
    if rows.is_empty() {
        let reasons = excluded.iter().map(|(y, r)| format!("{y}: {r}")).collect::<Vec<_>>().join("; ");
        return Err(FeatureError::NoUsableYears { month: target_month, horizon: horizon_days, reasons });
    }
    for (y, r) in &excluded {
        info!("{} month {target_month} horizon {horizon_days}: year {y} excluded ({r})", spec.kind);
    }
    let x_names = common_names(&rows.iter().map(|r| &r.x).collect::<Vec<_>>());
    let s_names = common_names(&rows.iter().map(|r| &r.s).collect::<Vec<_>>());
    if x_names.len() < rows[0].x.len() || s_names.len() < rows[0].s.len() {
        warn!("{} month {target_month} horizon {horizon_days}: columns not shared by every year were dropped", spec.kind);
    }
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.x.aligned(&x_names)).collect::<Result<_, _>>()?;
    let s: Vec<Vec<f64>> = rows.iter().map(|r| r.s.aligned(&s_names)).collect::<Result<_, _>>()?;
    Ok(Dataset {
        target_month,
        horizon_days,
        years: rows.iter().map(|r| r.year).collect(),
        asof_dates: rows.iter().map(|r| r.asof).collect(),
        x_names,
        s_names,
        x: Matrix::from_rows(&x),
        s: Matrix::from_rows(&s),
        y: rows.iter().map(|r| r.realized.expect("filtered")).collect(),
        excluded,
        pca: None,
    })
}

fn append_principal_components(ds: &mut Dataset<f64>) -> Result<(), FeatureError> {
    let fitted = match pca_scores(&ds.s, N_PRINCIPAL_COMPONENTS) {
        Err(PcaError::TooManyComponents { max, .. }) if max > 0 => {
            warn!("only {max} principal components available");
            pca_scores(&ds.s, max)
        }
        other => other,
    };
    let (scores, model) = match fitted {
        Ok(f) => f,
        Err(e @ (PcaError::DegenerateMatrix(_) | PcaError::TooFewRows(_))) => {
            warn!("state matrix has no principal components: {e}");
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let k = model.n_components();
    ds.s = ds.s.hstack(&scores);
    ds.s_names.extend((1..=k).map(|i| format!("PC{i}")));
    ds.pca = Some(model);
    Ok(())
}

fn uses_pcs(spec: &ModelSpec) -> bool {
    spec.state_features == StatePart::Full
}

/// Stacks one row per usable year for `(spec, target_month, horizon_days)`.
///
/// Each row uses the vintage on `last day of target month - horizon_days`.
/// Years with a missing feature or label are excluded and listed in
/// `Dataset::excluded`. For the full state set, five principal components of
/// the stacked pre-PCA state matrix are appended.
pub fn build_training_set(
    archive: &RawArchive,
    spec: &ModelSpec,
    target_month: u32,
    horizon_days: u32,
    years: &[i32],
    lags: LagConfig,
) -> Result<Dataset<f64>, FeatureError> {
    let (rows, excluded) = collect_rows(archive, spec, target_month, AsofRule::Horizon(horizon_days), years, lags);
    let mut ds = assemble(spec, target_month, horizon_days, rows, excluded)?;
    if uses_pcs(spec) {
        append_principal_components(&mut ds)?;
    }
    Ok(ds)
}

/// Training set over `train_years` plus the held-out `test_year` row,
/// both under the same as-of rule. Principal components are fitted on the
/// training rows only and the held-out row is projected with them.
pub fn build_oos_split(
    archive: &RawArchive,
    spec: &ModelSpec,
    target_month: u32,
    rule: AsofRule,
    train_years: &[i32],
    test_year: i32,
    lags: LagConfig,
) -> Result<(Dataset<f64>, HeldOutRow), FeatureError> {
    let target = YearMonth::new(test_year, target_month);
    let test = year_row(archive, spec, target, rule, lags)?;
    let horizon = (target.last_day() - test.asof).num_days() as u32;
    let (rows, excluded) = collect_rows(archive, spec, target_month, rule, train_years, lags);
    let mut ds = assemble(spec, target_month, horizon, rows, excluded)?;
    // Columns must be available for the test year too.
    let keep_x: Vec<usize> = (0..ds.x_names.len()).filter(|&j| test.x.get(&ds.x_names[j]).is_some()).collect();
    let keep_s: Vec<usize> = (0..ds.s_names.len()).filter(|&j| test.s.get(&ds.s_names[j]).is_some()).collect();
    if keep_x.len() < ds.x_names.len() || keep_s.len() < ds.s_names.len() {
        warn!("{} month {target_month}: held-out year {test_year} lacks some training columns; dropped", spec.kind);
        ds.x = ds.x.select_columns(&keep_x);
        ds.x_names = keep_x.iter().map(|&j| ds.x_names[j].clone()).collect();
        ds.s = ds.s.select_columns(&keep_s);
        ds.s_names = keep_s.iter().map(|&j| ds.s_names[j].clone()).collect();
    }
    let x = test.x.aligned(&ds.x_names)?;
    let mut s = test.s.aligned(&ds.s_names)?;
    if uses_pcs(spec) {
        append_principal_components(&mut ds)?;
        if let Some(model) = &ds.pca {
            let pcs = model.project(&s)?;
            s.extend(pcs);
        }
    }
    Ok((ds, HeldOutRow { year: test_year, asof: test.asof, x, s, realized: test.realized }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::{DailySeries, MonthlySeries};

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    /// Archive where SIE on a given day is a deterministic smooth function,
    /// SIT constant 1.5, AT 0.5 and CO2 400.
    fn archive_with(sie: impl Fn(NaiveDate) -> f64) -> RawArchive {
        let days = || d(1990, 1, 1).iter_days().take_while(|x| *x <= d(1999, 12, 31));
        let sie = DailySeries::from_entries(DailyVariable::Sie, days().map(|x| (x, Some(sie(x))))).unwrap();
        let sit = DailySeries::from_entries(DailyVariable::Sit, days().map(|x| (x, Some(1.5)))).unwrap();
        let months: Vec<YearMonth> = YearMonth::new(1989, 1).through(YearMonth::new(1999, 12)).collect();
        let at = MonthlySeries::from_entries(MonthlyVariable::At, months.iter().map(|m| (*m, 0.5))).unwrap();
        let co2 = MonthlySeries::from_entries(MonthlyVariable::Co2, months.iter().map(|m| (*m, 400.0))).unwrap();
        RawArchive::assemble(sie, sit, at, co2).unwrap()
    }

    fn wavy(x: NaiveDate) -> f64 {
        10.0 + 3.0 * ((x.ordinal() as f64) / 58.0).sin() + 0.01 * (x.year() - 1990) as f64
    }

    #[test]
    fn felr_row_on_july_10() {
        let a = archive_with(wavy);
        let snap = vintage_view(&a, d(1995, 7, 10), LagConfig::default()).unwrap();
        let row = felr_row(&snap, YearMonth::new(1995, 9)).unwrap();
        assert_eq!(row.names, vec![INTERCEPT, TIME, SIE_LAST_MONTH, SIE_LAST_30_DAYS, SIE_TODAY]);
        let june: f64 = d(1995, 6, 1).iter_days().take(30).map(wavy).sum::<f64>() / 30.0;
        let window: f64 = d(1995, 6, 11).iter_days().take(30).map(wavy).sum::<f64>() / 30.0;
        assert_eq!(row.values[1], 17.0);
        assert!((row.values[2] - june).abs() < 1e-12);
        assert!((row.values[3] - window).abs() < 1e-12);
        assert_eq!(row.values[4], wavy(d(1995, 7, 10)));
    }

    #[test]
    fn collinear_window_is_dropped_only_when_it_is_the_month() {
        let a = archive_with(wavy);
        let on = vintage_view(&a, d(1995, 11, 30), LagConfig::default()).unwrap();
        let row = felr_row(&on, YearMonth::new(1995, 12)).unwrap();
        assert_eq!(row.dropped, vec![SIE_LAST_30_DAYS.to_string()]);
        assert_eq!(row.len(), 4);
        for asof in d(1995, 1, 1).iter_days().take(365) {
            let snap = vintage_view(&a, asof, LagConfig::default()).unwrap();
            let r = felr_row(&snap, YearMonth::new(1996, 1)).unwrap();
            let m = crate::timeseries::last_complete_month(asof);
            let same_window = asof - Duration::days(29) == m.first_day() && asof == m.last_day();
            assert_eq!(!r.dropped.is_empty(), same_window, "{asof}");
        }
    }

    #[test]
    fn constant_series_rows() {
        let a = archive_with(|_| 7.25);
        let snap = vintage_view(&a, d(1996, 8, 13), LagConfig::default()).unwrap();
        let f = felr_row(&snap, YearMonth::new(1996, 9)).unwrap();
        assert_eq!(f.values, vec![1.0, 18.0, 7.25, 7.25, 7.25]);
        let p = pocket_row(&snap, YearMonth::new(1996, 9)).unwrap();
        assert_eq!(p.values, vec![1.0, 18.0, 7.25]);
        for (n, v) in p.names.iter().zip(&p.values) {
            assert_eq!(f.get(n), Some(*v));
        }
    }

    #[test]
    fn state_row_on_january_20() {
        let a = archive_with(wavy);
        let snap = vintage_view(&a, d(1996, 1, 20), LagConfig::default()).unwrap();
        let s = state_row(&snap, YearMonth::new(1996, 3)).unwrap();
        let count = |p: &str| s.names.iter().filter(|n| n.starts_with(p)).count();
        assert_eq!(count("SIE_M_"), 12);
        assert_eq!(count("SIT_M_"), 11);
        assert_eq!(count("CO2_"), 10);
        assert_eq!(count("AT_"), 9);
        assert_eq!(count("SIE_D"), 14);
        assert_eq!(count("SIT_D"), 14);
        assert!(s.names.contains(&"SIE_M_t-1_01".to_string()));
        assert!(s.names.contains(&"SIE_M_t-1_12".to_string()));
        assert!(s.names.contains(&"AT_t-1_09".to_string()));
        assert_eq!(s.get("SIT_Last30Days"), Some(1.5));
        assert_eq!(s.get("CO2_t-1_10"), Some(400.0));
        let unique: HashSet<&String> = s.names.iter().collect();
        assert_eq!(unique.len(), s.names.len());
    }

    #[test]
    fn horizon_zero_last30_equals_label() {
        let a = archive_with(wavy);
        let years: Vec<i32> = (1991..=1999).collect();
        let ds = build_training_set(&a, &ModelSpec::of(ModelKind::Felr), 9, 0, &years, LagConfig::default()).unwrap();
        assert_eq!(ds.n_rows(), 9);
        let col = ds.x_names.iter().position(|n| n == SIE_LAST_MONTH).unwrap();
        for i in 0..ds.n_rows() {
            assert_eq!(ds.asof_dates[i], d(years[i], 9, 30));
            assert_eq!(ds.x[(i, col)], ds.y[i]);
        }
        assert!(!ds.x_names.contains(&SIE_LAST_30_DAYS.to_string()));
    }

    #[test]
    fn labels_match_direct_means_and_x_lives_in_s() {
        let a = archive_with(wavy);
        let years: Vec<i32> = (1991..=1999).collect();
        let ds = build_training_set(&a, &ModelSpec::of(ModelKind::Feml), 9, 40, &years, LagConfig::default()).unwrap();
        for (i, y) in years.iter().enumerate() {
            let direct: f64 = d(*y, 9, 1).iter_days().take(30).map(wavy).sum::<f64>() / 30.0;
            assert!((ds.y[i] - direct).abs() < 1e-12);
        }
        for (j, n) in ds.x_names.iter().enumerate() {
            let k = ds.s_names.iter().position(|m| m == n).expect("X column in S");
            assert_eq!(ds.x.column(j), ds.s.column(k));
        }
        assert_eq!(ds.s_names.iter().filter(|n| n.starts_with("PC")).count(), 5);
        let pc1 = ds.s.column(ds.s_names.iter().position(|n| n == "PC1").unwrap());
        assert!(pc1.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn first_year_without_prior_lags_is_excluded() {
        let a = archive_with(wavy);
        let ds = build_training_set(&a, &ModelSpec::of(ModelKind::Feml), 9, 10, &(1990..=1999).collect::<Vec<_>>(), LagConfig::default())
            .unwrap();
        assert_eq!(ds.years[0], 1991);
        assert_eq!(ds.excluded.len(), 1);
        assert_eq!(ds.excluded[0].0, 1990);
    }

    #[test]
    fn calendar_asof_rule() {
        let r = AsofRule::CalendarDay { month: 6, day: 14 };
        assert_eq!(r.asof_for(YearMonth::new(2015, 9)), d(2015, 6, 14));
        let r = AsofRule::CalendarDay { month: 12, day: 1 };
        assert_eq!(r.asof_for(YearMonth::new(2016, 1)), d(2015, 12, 1));
        assert_eq!(AsofRule::Horizon(120).asof_for(YearMonth::new(2020, 9)), d(2020, 6, 2));
    }

    #[test]
    fn model_ids_parse() {
        for k in ModelKind::ALL {
            assert_eq!(k.id().parse::<ModelKind>().unwrap(), k);
        }
        assert!("nope".parse::<ModelKind>().is_err());
    }
}
