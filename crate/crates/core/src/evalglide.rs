//! Glide charts: RMSFE against days-to-target under the in-sample, out-of-bag
//! and recursive out-of-sample protocols, plus fraction-best summaries and
//! per-year forecast histories.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{build_oos_split, build_training_set, AsofRule, Dataset, FeatureError, ModelSpec};
use crate::ingest::{LagConfig, RawArchive};
use crate::linalg::{dot, lstsq_qr};
use crate::linear::{ols_fit, LinearError, RANK_TOL};
use crate::mrf::{fit_forest, MrfError, MrfParams};
use crate::scalar::Scalar;
use crate::timeseries::YearMonth;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no forecast errors to summarize")]
    EmptyErrors,
    #[error("curves do not share one horizon grid")]
    MismatchedHorizons,
    #[error("model {0} not among the curves")]
    UnknownModel(String),
    #[error("empty model subset")]
    EmptySubset,
    #[error("{year}: target month not yet realized")]
    NoRealized { year: i32 },
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("malformed glide table line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Forest(#[from] MrfError),
}

impl EvalError {
    /// True for failures in the numerics rather than in the data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            EvalError::Linear(_) | EvalError::Forest(_) | EvalError::EmptyErrors | EvalError::Feature(FeatureError::Pca(_))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    InSample,
    OutOfBag,
    RecursiveOos,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::InSample => "InSample",
            Protocol::OutOfBag => "OutOfBag",
            Protocol::RecursiveOos => "RecursiveOOS",
        })
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "InSample" => Ok(Protocol::InSample),
            "OutOfBag" => Ok(Protocol::OutOfBag),
            "RecursiveOOS" => Ok(Protocol::RecursiveOos),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GlideCurve<T> {
    pub model_id: String,
    pub target_month: u32,
    pub protocol: Protocol,
    /// Days before the last day of the target month, strictly decreasing.
    pub horizons: Vec<u32>,
    /// `None` marks a horizon that could not be evaluated; see `gaps`.
    pub rmsfe: Vec<Option<T>>,
    pub gaps: Vec<(u32, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ForecastRecord<T> {
    pub model_id: String,
    pub target_month: u32,
    pub year: i32,
    pub asof_date: NaiveDate,
    pub forecast: T,
    pub realized: Option<T>,
    /// `realized - forecast`.
    pub error: Option<T>,
}

/// Shared knobs for every evaluation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub lags: LagConfig,
    pub mrf: MrfParams,
    /// Earliest year any training window may use.
    pub first_year: i32,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { lags: LagConfig::default(), mrf: MrfParams::default(), first_year: 1979 }
    }
}

/// Default grid: 120 days out down to the last day of the month.
pub fn default_horizons() -> Vec<u32> {
    (0..=120).rev().collect()
}

pub fn rmsfe<T: Scalar>(errors: &[T]) -> Result<T, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyErrors);
    }
    let ss: T = errors.iter().map(|&e| e * e).sum();
    Ok((ss / T::of_usize(errors.len())).sqrt())
}

/// Forest seed for one evaluation cell, mixed from the run seed and the
/// cell coordinates so cells are independent of evaluation order.
pub fn cell_seed(base: u64, model_id: &str, month: u32, horizon: u32, year: i32) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    let mut mix = |v: u64| {
        h ^= v;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    };
    for b in model_id.bytes() {
        mix(b as u64);
    }
    mix(month as u64);
    mix(horizon as u64);
    mix(year as i64 as u64);
    h
}

/// Drops `X` columns that are exact linear combinations of earlier ones
/// (e.g. every lag of a constant series). Returns the dropped names.
pub fn drop_collinear_x(ds: &mut Dataset<f64>) -> Vec<String> {
    let mut keep: Vec<usize> = Vec::new();
    let probe: Vec<f64> = (0..ds.n_rows()).map(|i| (i as f64 * 0.7548776662).fract()).collect();
    for j in 0..ds.n_x() {
        let mut trial = keep.clone();
        trial.push(j);
        if lstsq_qr(&ds.x.select_columns(&trial), &probe, RANK_TOL).is_some() {
            keep = trial;
        }
    }
    if keep.len() == ds.n_x() {
        return Vec::new();
    }
    let dropped: Vec<String> = (0..ds.n_x()).filter(|j| !keep.contains(j)).map(|j| ds.x_names[j].clone()).collect();
    warn!("month {} horizon {}: dropped collinear regressors {dropped:?}", ds.target_month, ds.horizon_days);
    ds.x = ds.x.select_columns(&keep);
    ds.x_names = keep.iter().map(|&j| ds.x_names[j].clone()).collect();
    dropped
}

fn forest_params(settings: &EvalSettings, spec: &ModelSpec, month: u32, horizon: u32, year: i32) -> MrfParams {
    MrfParams { seed: cell_seed(settings.mrf.seed, spec.kind.id(), month, horizon, year), ..settings.mrf.clone() }
}

/// In-sample accuracy of one model at one horizon: residual RMSFE for linear
/// models, out-of-bag RMSFE for forests.
pub fn insample_point<T: Scalar>(
    spec: &ModelSpec,
    archive: &RawArchive,
    target_month: u32,
    horizon: u32,
    years: &[i32],
    settings: &EvalSettings,
) -> Result<T, EvalError> {
    let mut ds = build_training_set(archive, spec, target_month, horizon, years, settings.lags)?;
    drop_collinear_x(&mut ds);
    let ds = ds.cast::<T>();
    if spec.kind.is_forest() {
        let forest = fit_forest(&ds, &forest_params(settings, spec, target_month, horizon, 0))?;
        Ok(forest.oob_rmsfe(&ds)?)
    } else {
        let fit = ols_fit(&ds.x, &ds.y)?;
        rmsfe(&fit.residuals)
    }
}

pub fn insample_protocol(spec: &ModelSpec) -> Protocol {
    if spec.kind.is_forest() {
        Protocol::OutOfBag
    } else {
        Protocol::InSample
    }
}

fn check_horizons(horizons: &[u32]) -> Result<(), EvalError> {
    if horizons.is_empty() || horizons.windows(2).any(|w| w[0] <= w[1]) {
        return Err(EvalError::MismatchedHorizons);
    }
    Ok(())
}

fn curve_from<T: Scalar>(
    spec: &ModelSpec,
    target_month: u32,
    protocol: Protocol,
    horizons: &[u32],
    points: Vec<Result<T, EvalError>>,
) -> GlideCurve<T> {
    let mut gaps = Vec::new();
    let rmsfe = horizons
        .iter()
        .zip(points)
        .map(|(&h, p)| match p {
            Ok(v) => Some(v),
            Err(e) => {
                warn!("{} month {target_month} horizon {h}: {e}", spec.kind);
                gaps.push((h, e.to_string()));
                None
            }
        })
        .collect();
    GlideCurve { model_id: spec.kind.id().to_string(), target_month, protocol, horizons: horizons.to_vec(), rmsfe, gaps }
}

/// In-sample glide curve over `years`.
pub fn insample_glide<T: Scalar>(
    spec: &ModelSpec,
    archive: &RawArchive,
    target_month: u32,
    horizons: &[u32],
    years: &[i32],
    settings: &EvalSettings,
) -> Result<GlideCurve<T>, EvalError> {
    check_horizons(horizons)?;
    let points: Vec<Result<T, EvalError>> = horizons
        .par_iter()
        .map(|&h| insample_point(spec, archive, target_month, h, years, settings))
        .collect();
    Ok(curve_from(spec, target_month, insample_protocol(spec), horizons, points))
}

/// Trains on every year from `settings.first_year` up to (excluding) the
/// target year and forecasts the target year at the as-of date given by `rule`.
pub fn oos_forecast<T: Scalar>(
    spec: &ModelSpec,
    archive: &RawArchive,
    target_month: u32,
    rule: AsofRule,
    year: i32,
    settings: &EvalSettings,
) -> Result<ForecastRecord<T>, EvalError> {
    let train_years: Vec<i32> = (settings.first_year..year).collect();
    let (mut ds, held) = build_oos_split(archive, spec, target_month, rule, &train_years, year, settings.lags)?;
    let names_before = ds.x_names.clone();
    drop_collinear_x(&mut ds);
    let x_new: Vec<T> = ds
        .x_names
        .iter()
        .map(|n| T::of(held.x[names_before.iter().position(|m| m == n).expect("kept column exists")]))
        .collect();
    let s_new: Vec<T> = held.s.iter().map(|&v| T::of(v)).collect();
    let horizon = (YearMonth::new(year, target_month).last_day() - held.asof).num_days() as u32;
    let train = ds.cast::<T>();
    let forecast = if spec.kind.is_forest() {
        let forest = fit_forest(&train, &forest_params(settings, spec, target_month, horizon, year))?;
        forest.predict(&x_new, &s_new)?
    } else {
        dot(&x_new, &ols_fit(&train.x, &train.y)?.coefficients)
    };
    let realized = held.realized.map(T::of);
    Ok(ForecastRecord {
        model_id: spec.kind.id().to_string(),
        target_month,
        year,
        asof_date: held.asof,
        forecast,
        realized,
        error: realized.map(|r| r - forecast),
    })
}

fn squared_oos_error<T: Scalar>(
    spec: &ModelSpec,
    archive: &RawArchive,
    target_month: u32,
    horizon: u32,
    year: i32,
    settings: &EvalSettings,
) -> Result<T, EvalError> {
    let rec = oos_forecast::<T>(spec, archive, target_month, AsofRule::Horizon(horizon), year, settings)?;
    rec.error.ok_or(EvalError::NoRealized { year })
}

/// Recursive expanding-window out-of-sample glide curves, one per spec.
/// Each point is the RMSFE over `test_years`; a horizon with any failed
/// year is left as a gap.
pub fn oos_glide<T: Scalar>(
    specs: &[ModelSpec],
    archive: &RawArchive,
    target_month: u32,
    test_years: &[i32],
    horizons: &[u32],
    settings: &EvalSettings,
) -> Result<Vec<GlideCurve<T>>, EvalError> {
    check_horizons(horizons)?;
    if test_years.is_empty() {
        return Err(EvalError::EmptyErrors);
    }
    let cells: Vec<(usize, usize, i32)> = (0..specs.len())
        .flat_map(|m| (0..horizons.len()).flat_map(move |h| test_years.iter().map(move |&y| (m, h, y))))
        .collect();
    let errors: Vec<Result<T, EvalError>> = cells
        .par_iter()
        .map(|&(m, h, y)| squared_oos_error(&specs[m], archive, target_month, horizons[h], y, settings))
        .collect();
    let mut it = errors.into_iter();
    let mut curves = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut points = Vec::with_capacity(horizons.len());
        for _ in horizons {
            let per_year: Vec<Result<T, EvalError>> = it.by_ref().take(test_years.len()).collect();
            points.push(per_year.into_iter().collect::<Result<Vec<T>, _>>().and_then(|e| rmsfe(&e)));
        }
        curves.push(curve_from(spec, target_month, Protocol::RecursiveOos, horizons, points));
        info!("{} month {target_month}: out-of-sample curve done", spec.kind);
    }
    Ok(curves)
}

/// One recursive out-of-sample forecast per test year at a fixed as-of rule.
pub fn forecast_history<T: Scalar>(
    spec: &ModelSpec,
    archive: &RawArchive,
    target_month: u32,
    rule: AsofRule,
    test_years: &[i32],
    settings: &EvalSettings,
) -> Result<Vec<ForecastRecord<T>>, EvalError> {
    test_years
        .par_iter()
        .map(|&y| oos_forecast(spec, archive, target_month, rule, y, settings))
        .collect()
}

fn shared_grid<T: Scalar>(curves: &[GlideCurve<T>]) -> Result<&[u32], EvalError> {
    let first = curves.first().ok_or(EvalError::EmptySubset)?;
    if curves.iter().any(|c| c.horizons != first.horizons || c.rmsfe.len() != c.horizons.len()) {
        return Err(EvalError::MismatchedHorizons);
    }
    Ok(&first.horizons)
}

/// Per horizon, the indices of curves attaining the minimum RMSFE (all of
/// them on exact ties). Horizons where no curve has a value are skipped.
fn winners<T: Scalar>(curves: &[GlideCurve<T>]) -> Result<Vec<Vec<usize>>, EvalError> {
    let grid = shared_grid(curves)?;
    let mut out = Vec::new();
    for h in 0..grid.len() {
        let vals: Vec<Option<T>> = curves.iter().map(|c| c.rmsfe[h]).collect();
        let Some(min) = vals.iter().flatten().copied().reduce(T::min) else { continue };
        out.push(vals.iter().enumerate().filter(|(_, v)| **v == Some(min)).map(|(i, _)| i).collect());
    }
    Ok(out)
}

/// Share of horizons on which each model in `subset` attains the lowest RMSFE
/// among all `curves`. Ties count for every tied model.
pub fn fraction_best<T: Scalar>(curves: &[GlideCurve<T>], subset: &[&str]) -> Result<Vec<(String, f64)>, EvalError> {
    if subset.is_empty() {
        return Err(EvalError::EmptySubset);
    }
    let wins = winners(curves)?;
    let total = wins.len().max(1) as f64;
    subset
        .iter()
        .map(|&id| {
            let idx = curves.iter().position(|c| c.model_id == id).ok_or_else(|| EvalError::UnknownModel(id.to_string()))?;
            let k = wins.iter().filter(|w| w.contains(&idx)).count();
            Ok((id.to_string(), k as f64 / total))
        })
        .collect()
}

/// Share of horizons on which some member of `group` attains the lowest RMSFE.
pub fn fraction_best_group<T: Scalar>(curves: &[GlideCurve<T>], group: &[&str]) -> Result<f64, EvalError> {
    if group.is_empty() {
        return Err(EvalError::EmptySubset);
    }
    let idx: Vec<usize> = group
        .iter()
        .map(|&id| curves.iter().position(|c| c.model_id == id).ok_or_else(|| EvalError::UnknownModel(id.to_string())))
        .collect::<Result<_, _>>()?;
    let wins = winners(curves)?;
    let k = wins.iter().filter(|w| w.iter().any(|i| idx.contains(i))).count();
    Ok(k as f64 / wins.len().max(1) as f64)
}

/// Run metadata rendered as `# key=value` lines.
pub fn metadata_header(meta: &BTreeMap<String, String>) -> String {
    meta.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

pub const GLIDE_HEADER: &str = "model,month,protocol,horizon_days,rmsfe";
pub const HISTORY_HEADER: &str = "model,month,year,asof_date,forecast,realized,error";

fn opt<T: Scalar>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn glide_csv<T: Scalar>(curves: &[GlideCurve<T>], meta: &BTreeMap<String, String>) -> String {
    let mut out = metadata_header(meta);
    out.push_str(GLIDE_HEADER);
    out.push('\n');
    for c in curves {
        for (h, v) in c.horizons.iter().zip(&c.rmsfe) {
            out.push_str(&format!("{},{},{},{},{}\n", c.model_id, c.target_month, c.protocol, h, opt(*v)));
        }
    }
    out
}

#[derive(Serialize)]
struct Mirror<'a, R> {
    metadata: &'a BTreeMap<String, String>,
    records: &'a [R],
}

pub fn glide_json<T: Scalar>(curves: &[GlideCurve<T>], meta: &BTreeMap<String, String>) -> String {
    serde_json::to_string_pretty(&Mirror { metadata: meta, records: curves }).expect("curves serialize")
}

pub fn history_csv<T: Scalar>(records: &[ForecastRecord<T>], meta: &BTreeMap<String, String>) -> String {
    let mut out = metadata_header(meta);
    out.push_str(HISTORY_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.model_id,
            r.target_month,
            r.year,
            r.asof_date,
            r.forecast,
            opt(r.realized),
            opt(r.error)
        ));
    }
    out
}

pub fn history_json<T: Scalar>(records: &[ForecastRecord<T>], meta: &BTreeMap<String, String>) -> String {
    serde_json::to_string_pretty(&Mirror { metadata: meta, records }).expect("records serialize")
}

/// Reads a glide table back into curves, in order of first appearance.
pub fn parse_glide_csv(text: &str) -> Result<Vec<GlideCurve<f64>>, EvalError> {
    let mut curves: Vec<GlideCurve<f64>> = Vec::new();
    let mut seen_header = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line != GLIDE_HEADER {
                return Err(EvalError::Parse { line: i + 1, reason: format!("expected header {GLIDE_HEADER:?}") });
            }
            seen_header = true;
            continue;
        }
        let bad = |reason: String| EvalError::Parse { line: i + 1, reason };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(format!("{} fields", f.len())));
        }
        let month: u32 = f[1].parse().map_err(|_| bad(format!("month {:?}", f[1])))?;
        let protocol: Protocol = f[2].parse().map_err(bad)?;
        let h: u32 = f[3].parse().map_err(|_| bad(format!("horizon {:?}", f[3])))?;
        let v = match f[4] {
            "NA" => None,
            s => Some(s.parse::<f64>().map_err(|_| bad(format!("rmsfe {s:?}")))?),
        };
        let pos = curves.iter().position(|c| c.model_id == f[0] && c.target_month == month && c.protocol == protocol);
        let c = match pos {
            Some(p) => &mut curves[p],
            None => {
                curves.push(GlideCurve {
                    model_id: f[0].to_string(),
                    target_month: month,
                    protocol,
                    horizons: Vec::new(),
                    rmsfe: Vec::new(),
                    gaps: Vec::new(),
                });
                curves.last_mut().expect("just pushed")
            }
        };
        c.horizons.push(h);
        c.rmsfe.push(v);
    }
    if !seen_header {
        return Err(EvalError::MissingInput("glide table has no header".into()));
    }
    Ok(curves)
}
