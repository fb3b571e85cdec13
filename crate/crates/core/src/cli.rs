//! Command-line front end: configuration, subcommands and exit codes.
//!
//! Configuration comes from an optional `key=value` file, then command-line
//! flags (`--set key=value` or the dedicated flags), later sources winning.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, Utc};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::evalglide::{
    self, fraction_best, fraction_best_group, glide_csv, glide_json, history_csv, history_json, insample_glide,
    oos_forecast, oos_glide, parse_glide_csv, EvalError, EvalSettings, ForecastRecord, GlideCurve,
};
use crate::features::{build_training_set, AsofRule, FeatureError, ModelKind, ModelSpec};
use crate::ingest::{
    daily_from_csv, daily_to_csv, fetch_to_file, monthly_from_csv, monthly_to_csv, parse_berkeley_at, parse_noaa_co2,
    parse_nsidc_sie, parse_piomas_sit, read_bytes, IngestError, LagConfig, RawArchive,
};
use crate::mrf::{beta_paths_csv, fit_forest, MrfError, MrfParams};
use crate::scalar::Scalar;
use crate::synthetic::{self, SyntheticConfig, AT_FILE, CO2_FILE, SIE_FILE, SIT_FILE};
use crate::timeseries::{DailyVariable, MonthlyVariable, YearMonth};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Models compared by the fraction-best summary.
pub const BEST_FRACTION_SET: [&str; 4] = ["FELR", "PocketFELR", "FEML", "PocketFEML"];
pub const FEML_FAMILY: [&str; 2] = ["FEML", "PocketFEML"];

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::Pca(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<MrfError> for CliError {
    fn from(e: MrfError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub archive_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Per-source path or URL overriding the file in `data_dir`.
    pub sie_source: Option<String>,
    pub sit_source: Option<String>,
    pub at_source: Option<String>,
    pub co2_source: Option<String>,
    pub lags: LagConfig,
    pub mrf: MrfParams,
    pub models: Vec<ModelKind>,
    pub months: Vec<u32>,
    pub horizons: Vec<u32>,
    pub insample_years: Vec<i32>,
    pub test_years: Vec<i32>,
    pub first_year: i32,
    pub precision: Precision,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data/raw"),
            archive_dir: PathBuf::from("data/archive"),
            out_dir: PathBuf::from("out"),
            sie_source: None,
            sit_source: None,
            at_source: None,
            co2_source: None,
            lags: LagConfig::default(),
            mrf: MrfParams::default(),
            models: vec![ModelKind::LinearTrend, ModelKind::Felr, ModelKind::PocketFelr, ModelKind::Feml, ModelKind::PocketFeml],
            months: vec![9],
            horizons: evalglide::default_horizons(),
            insample_years: (1979..=2020).collect(),
            test_years: (2012..=2021).collect(),
            first_year: 1979,
            precision: Precision::F64,
            threads: None,
        }
    }
}

/// Every accepted configuration key.
pub const CONFIG_KEYS: [&str; 28] = [
    "data_dir",
    "archive_dir",
    "out_dir",
    "sie_source",
    "sit_source",
    "at_source",
    "co2_source",
    "lag_sit_months",
    "lag_co2_months",
    "lag_at_months",
    "mtry_fraction",
    "row_subsample_rate",
    "zeta",
    "lambda",
    "n_trees",
    "min_leaf_obs",
    "bag_block_len_years",
    "seed",
    "models",
    "months",
    "horizons",
    "insample_years",
    "test_years",
    "first_year",
    "precision",
    "threads",
    "fetch",
    "log_level",
];

fn parse_num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V, CliError> {
    v.trim().parse().map_err(|_| CliError::Usage(format!("{key}: cannot parse {v:?}")))
}

/// `a..b` (inclusive, either direction) or a comma list.
fn parse_int_list<V>(key: &str, v: &str) -> Result<Vec<V>, CliError>
where
    V: std::str::FromStr + Copy + TryFrom<i64>,
{
    let conv = |x: i64| V::try_from(x).map_err(|_| CliError::Usage(format!("{key}: {x} out of range")));
    if let Some((a, b)) = v.split_once("..") {
        let (a, b): (i64, i64) = (parse_num(key, a)?, parse_num(key, b)?);
        let vals: Vec<i64> = if a <= b { (a..=b).collect() } else { (b..=a).rev().collect() };
        return vals.into_iter().map(conv).collect();
    }
    let out: Vec<V> = v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_num(key, s)).collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err(CliError::Usage(format!("{key}: empty list")));
    }
    Ok(out)
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(CliError::Usage(format!("{key}: expected true/false, got {other:?}"))),
    }
}

fn join<V: ToString>(v: &[V]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        let opt = |v: &str| (!v.is_empty()).then(|| v.to_string());
        match key {
            "data_dir" => self.data_dir = PathBuf::from(v),
            "archive_dir" => self.archive_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "sie_source" => self.sie_source = opt(v),
            "sit_source" => self.sit_source = opt(v),
            "at_source" => self.at_source = opt(v),
            "co2_source" => self.co2_source = opt(v),
            "lag_sit_months" => self.lags.sit_months = parse_num(key, v)?,
            "lag_co2_months" => self.lags.co2_months = parse_num(key, v)?,
            "lag_at_months" => self.lags.at_months = parse_num(key, v)?,
            "mtry_fraction" => self.mrf.mtry_fraction = parse_num(key, v)?,
            "row_subsample_rate" => self.mrf.row_subsample_rate = parse_num(key, v)?,
            "zeta" => self.mrf.zeta = parse_num(key, v)?,
            "lambda" => self.mrf.lambda = parse_num(key, v)?,
            "n_trees" => self.mrf.n_trees = parse_num(key, v)?,
            "min_leaf_obs" => self.mrf.min_leaf_obs = if v == "auto" { None } else { Some(parse_num(key, v)?) },
            "bag_block_len_years" => self.mrf.bag_block_len_years = parse_num(key, v)?,
            "seed" => self.mrf.seed = parse_num(key, v)?,
            "models" => {
                self.models = v
                    .split(',')
                    .map(|m| m.trim().parse::<ModelKind>().map_err(|e| CliError::Usage(format!("models: {e}"))))
                    .collect::<Result<_, _>>()?
            }
            "months" => self.months = parse_int_list(key, v)?,
            "horizons" => self.horizons = parse_int_list(key, v)?,
            "insample_years" => self.insample_years = parse_int_list(key, v)?,
            "test_years" => self.test_years = parse_int_list(key, v)?,
            "first_year" => self.first_year = parse_num(key, v)?,
            "precision" => {
                self.precision = match v {
                    "f64" => Precision::F64,
                    "f32" => Precision::F32,
                    other => return Err(CliError::Usage(format!("precision: expected f32 or f64, got {other:?}"))),
                }
            }
            "threads" => self.threads = if v == "auto" { None } else { Some(parse_num(key, v)?) },
            // Accepted for file-based configs; the flag itself is read by the caller.
            "fetch" | "log_level" => {
                if key == "fetch" {
                    parse_bool(key, v)?;
                }
            }
            other => return Err(CliError::Usage(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Range and consistency checks, run before any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        let u = |m: String| Err(CliError::Usage(m));
        if self.months.iter().any(|m| !(1..=12).contains(m)) {
            return u(format!("months must be in 1..=12, got {:?}", self.months));
        }
        if self.horizons.is_empty() || self.horizons.windows(2).any(|w| w[0] <= w[1]) {
            return u("horizons must be strictly decreasing".into());
        }
        if self.models.is_empty() {
            return u("no models configured".into());
        }
        if self.insample_years.is_empty() || self.test_years.is_empty() {
            return u("year lists must be nonempty".into());
        }
        if self.test_years.iter().any(|&y| y <= self.first_year) {
            return u("every test year must come after first_year".into());
        }
        if self.threads == Some(0) {
            return u("threads must be positive".into());
        }
        self.mrf.validate(1).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    /// Canonical `key -> value` rendering, enough to rerun the same configuration.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("lag_sit_months", self.lags.sit_months.to_string());
        put("lag_co2_months", self.lags.co2_months.to_string());
        put("lag_at_months", self.lags.at_months.to_string());
        put("mtry_fraction", self.mrf.mtry_fraction.to_string());
        put("row_subsample_rate", self.mrf.row_subsample_rate.to_string());
        put("zeta", self.mrf.zeta.to_string());
        put("lambda", self.mrf.lambda.to_string());
        put("n_trees", self.mrf.n_trees.to_string());
        put("min_leaf_obs", self.mrf.min_leaf_obs.map_or("auto".into(), |v| v.to_string()));
        put("bag_block_len_years", self.mrf.bag_block_len_years.to_string());
        put("seed", self.mrf.seed.to_string());
        put("models", self.models.iter().map(|m| m.id()).collect::<Vec<_>>().join(","));
        put("months", join(&self.months));
        put("horizons", join(&self.horizons));
        put("insample_years", join(&self.insample_years));
        put("test_years", join(&self.test_years));
        put("first_year", self.first_year.to_string());
        put("precision", if self.precision == Precision::F32 { "f32" } else { "f64" }.into());
        m
    }

    pub fn settings(&self) -> EvalSettings {
        EvalSettings { lags: self.lags, mrf: self.mrf.clone(), first_year: self.first_year }
    }

    pub fn specs(&self) -> Vec<ModelSpec> {
        self.models.iter().map(|&k| ModelSpec::of(k)).collect()
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are ignored.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", i + 1)))?;
        let k = k.trim();
        if !CONFIG_KEYS.contains(&k) {
            return Err(CliError::Usage(format!("config line {}: unknown key {k:?}", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Parser)]
#[command(name = "seaice-glide", version, about = "Fixed-target Arctic sea-ice extent forecasts and glide charts")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// key=value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub archive_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma list or range, e.g. 9 or 6..10
    #[arg(long, global = true)]
    pub months: Option<String>,
    /// Comma list of model ids
    #[arg(long, global = true)]
    pub models: Option<String>,
    /// Range or list of days to target, e.g. 120..0
    #[arg(long, global = true)]
    pub horizons: Option<String>,
    #[arg(long, global = true)]
    pub n_trees: Option<usize>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output (repeatable)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse the four raw sources into the canonical archive cache
    Ingest {
        /// Download sources given as URLs before parsing
        #[arg(long)]
        fetch: bool,
    },
    /// In-sample glide curves (residual RMSFE for linear models, out-of-bag for forests)
    Glide,
    /// Recursive out-of-sample glide curves over the test years
    Oos,
    /// Share of horizons on which each model has the lowest RMSFE
    BestFrac {
        /// Which glide tables to read: oos or insample
        #[arg(long, default_value = "oos")]
        protocol: String,
    },
    /// Point forecasts made on one as-of date
    Forecast {
        #[arg(long)]
        asof: NaiveDate,
    },
    /// One out-of-sample forecast per test year on a fixed calendar day (MM-DD)
    History {
        #[arg(long)]
        day: String,
    },
    /// Export the per-year coefficient paths of a forest model
    Betas {
        #[arg(long)]
        horizon: u32,
        #[arg(long, default_value = "FEML")]
        model: String,
    },
    /// Write a seeded synthetic set of raw source files
    Synth {
        #[arg(long, default_value_t = 1)]
        synth_seed: u64,
        /// Daily extent without the historical sampling gaps
        #[arg(long)]
        no_gaps: bool,
    },
}

/// Loads the config file, then flag overrides; flags win.
pub fn resolve_config(g: &GlobalOpts) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &g.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        for (k, v) in parse_config_text(&text)? {
            cfg.set(&k, &v)?;
        }
    }
    let mut flags: Vec<(String, String)> = Vec::new();
    let mut flag = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            flags.push((k.to_string(), v));
        }
    };
    flag("out_dir", g.out_dir.as_ref().map(|p| p.display().to_string()));
    flag("archive_dir", g.archive_dir.as_ref().map(|p| p.display().to_string()));
    flag("data_dir", g.data_dir.as_ref().map(|p| p.display().to_string()));
    flag("seed", g.seed.map(|v| v.to_string()));
    flag("months", g.months.clone());
    flag("models", g.models.clone());
    flag("horizons", g.horizons.clone());
    flag("n_trees", g.n_trees.map(|v| v.to_string()));
    flag("threads", g.threads.map(|v| v.to_string()));
    for s in &g.set {
        let (k, v) = s.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        if !CONFIG_KEYS.contains(&k.trim()) {
            return Err(CliError::Usage(format!("unknown configuration key {:?}", k.trim())));
        }
        flags.push((k.trim().to_string(), v.to_string()));
    }
    for (k, v) in flags {
        cfg.set(&k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the program with the given arguments and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("seaice-glide: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.global)?;
    if let Some(n) = cfg.threads {
        // Fails only if a pool already exists, in which case that pool is used.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Ingest { fetch } => cmd_ingest(&cfg, *fetch).map(|_| ()),
        Command::Glide => cmd_glide(&cfg).map(|_| ()),
        Command::Oos => cmd_oos(&cfg).map(|_| ()),
        Command::BestFrac { protocol } => cmd_best_fraction(&cfg, protocol).map(|_| ()),
        Command::Forecast { asof } => cmd_forecast(&cfg, *asof).map(|_| ()),
        Command::History { day } => cmd_history(&cfg, day).map(|_| ()),
        Command::Betas { horizon, model } => {
            let kind: ModelKind = model.parse().map_err(|e: FeatureError| CliError::Usage(e.to_string()))?;
            cmd_betas(&cfg, kind, *horizon).map(|_| ())
        }
        Command::Synth { synth_seed, no_gaps } => {
            let files = synthetic::generate(&SyntheticConfig {
                seed: *synth_seed,
                realistic_gaps: !no_gaps,
                ..SyntheticConfig::default()
            });
            for p in files.write_to(&cfg.data_dir)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub source: String,
    pub origin: String,
    pub retrieved: String,
    pub raw_sha256: String,
    pub cache_file: String,
    pub cache_sha256: String,
}

const CACHE_FILES: [(&str, &str); 4] =
    [("SIE", "sie_daily.csv"), ("SIT", "sit_daily.csv"), ("AT", "at_monthly.csv"), ("CO2", "co2_monthly.csv")];

fn is_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://")
}

/// Finds the raw file for a source: explicit path, downloaded URL, or the
/// archive name inside `data_dir` (any `PIOMAS*.dat.gz` for thickness).
fn locate_source(cfg: &RunConfig, source: &str, fetch: bool) -> Result<(PathBuf, String), CliError> {
    let (explicit, default_name) = match source {
        "SIE" => (&cfg.sie_source, SIE_FILE),
        "SIT" => (&cfg.sit_source, SIT_FILE),
        "AT" => (&cfg.at_source, AT_FILE),
        _ => (&cfg.co2_source, CO2_FILE),
    };
    if let Some(s) = explicit {
        if is_url(s) {
            let name = s.rsplit('/').next().filter(|n| !n.is_empty()).unwrap_or(default_name);
            let dest = cfg.data_dir.join(name);
            if fetch {
                info!("{source}: downloading {s}");
                fetch_to_file(s, &dest)?;
            } else if !dest.exists() {
                return Err(CliError::Usage(format!("{source}: {s} is a URL; pass --fetch to download it")));
            }
            return Ok((dest, s.clone()));
        }
        return Ok((PathBuf::from(s), s.clone()));
    }
    let direct = cfg.data_dir.join(default_name);
    if source == "SIT" && !direct.exists() {
        let found = std::fs::read_dir(&cfg.data_dir)
            .ok()
            .into_iter()
            .flatten()
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("PIOMAS") && n.ends_with(".dat.gz"))
            })
            .min();
        if let Some(p) = found {
            return Ok((p.clone(), p.display().to_string()));
        }
    }
    Ok((direct.clone(), direct.display().to_string()))
}

fn modified_date(path: &Path) -> String {
    std::fs::metadata(path)
        .and_then(|m| m.modified())
        .map(|t| chrono::DateTime::<Utc>::from(t).date_naive().to_string())
        .unwrap_or_else(|_| "unknown".into())
}

/// Parses every source, reporting all failures together, and writes the
/// canonical cache plus `manifest.csv` / `manifest.json`.
pub fn cmd_ingest(cfg: &RunConfig, fetch: bool) -> Result<Vec<ManifestEntry>, CliError> {
    let mut failures = Vec::new();
    let mut raw = Vec::new();
    for source in ["SIE", "SIT", "AT", "CO2"] {
        let located = locate_source(cfg, source, fetch);
        let (path, origin) = match located {
            Ok(p) => p,
            Err(CliError::Usage(m)) => return Err(CliError::Usage(m)),
            Err(e) => {
                failures.push(format!("{source}: {e}"));
                continue;
            }
        };
        match read_bytes(&path) {
            Ok(bytes) => raw.push((source, path, origin, bytes)),
            Err(e) => failures.push(format!("{source}: {e}")),
        }
    }
    let mut sie = None;
    let mut sit = None;
    let mut at = None;
    let mut co2 = None;
    for (source, _, _, bytes) in &raw {
        let text = || String::from_utf8_lossy(bytes).into_owned();
        let parsed = match *source {
            "SIE" => parse_nsidc_sie(&text()).map(|s| sie = Some(s)),
            "SIT" => parse_piomas_sit(bytes).map(|s| sit = Some(s)),
            "AT" => parse_berkeley_at(&text()).map(|s| at = Some(s)),
            _ => parse_noaa_co2(&text()).map(|s| co2 = Some(s)),
        };
        if let Err(e) = parsed {
            failures.push(format!("{source}: {e}"));
        }
    }
    if !failures.is_empty() {
        return Err(CliError::Data(failures.join("; ")));
    }
    let sie = sie.expect("parsed");
    let archive = RawArchive::assemble(sie.clone(), sit.expect("parsed"), at.expect("parsed"), co2.expect("parsed"))?;
    // Extent is cached unfilled so the filled days stay known after reloading.
    let cache = [
        daily_to_csv(&sie),
        daily_to_csv(&archive.sit_daily),
        monthly_to_csv(&archive.at_monthly),
        monthly_to_csv(&archive.co2_monthly),
    ];
    let mut manifest = Vec::new();
    for ((source, path, origin, bytes), ((_, file), body)) in raw.iter().zip(CACHE_FILES.iter().zip(&cache)) {
        write_file(&cfg.archive_dir.join(file), body.as_bytes())?;
        manifest.push(ManifestEntry {
            source: source.to_string(),
            origin: origin.clone(),
            retrieved: modified_date(path),
            raw_sha256: sha256_hex(bytes),
            cache_file: file.to_string(),
            cache_sha256: sha256_hex(body.as_bytes()),
        });
    }
    let mut csv = String::from("source,origin,retrieved,raw_sha256,cache_file,cache_sha256\n");
    for m in &manifest {
        csv.push_str(&format!("{},{},{},{},{},{}\n", m.source, m.origin, m.retrieved, m.raw_sha256, m.cache_file, m.cache_sha256));
    }
    write_file(&cfg.archive_dir.join("manifest.csv"), csv.as_bytes())?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&cfg.archive_dir.join("manifest.json"), json.as_bytes())?;
    let (first, last) = archive.coverage();
    println!("archive written to {} (SIE {first} .. {last})", cfg.archive_dir.display());
    Ok(manifest)
}

/// Reads the canonical cache written by `ingest`, with a digest of its contents.
pub fn load_archive(dir: &Path) -> Result<(RawArchive, String), CliError> {
    let mut texts = Vec::new();
    let mut hasher = Sha256::new();
    for (_, file) in CACHE_FILES {
        let p = dir.join(file);
        let t = std::fs::read_to_string(&p)
            .map_err(|e| CliError::Data(format!("archive cache missing ({}): {e}; run `ingest` first", p.display())))?;
        hasher.update(t.as_bytes());
        texts.push(t);
    }
    let archive = RawArchive::assemble(
        daily_from_csv(&texts[0], DailyVariable::Sie)?,
        daily_from_csv(&texts[1], DailyVariable::Sit)?,
        monthly_from_csv(&texts[2], MonthlyVariable::At)?,
        monthly_from_csv(&texts[3], MonthlyVariable::Co2)?,
    )?;
    let digest: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((archive, digest))
}

fn run_metadata(cfg: &RunConfig, command: &str, digest: &str) -> BTreeMap<String, String> {
    let mut m = cfg.to_pairs();
    m.insert("command".into(), command.into());
    m.insert("code_version".into(), env!("CARGO_PKG_VERSION").into());
    m.insert("archive_sha256".into(), digest.into());
    m
}

fn write_pair(out_dir: &Path, stem: &str, csv: &str, json: &str) -> Result<PathBuf, CliError> {
    let csv_path = out_dir.join(format!("{stem}.csv"));
    write_file(&csv_path, csv.as_bytes())?;
    write_file(&out_dir.join(format!("{stem}.json")), json.as_bytes())?;
    Ok(csv_path)
}

fn insample_curves<T: Scalar>(cfg: &RunConfig, archive: &RawArchive, month: u32) -> Result<Vec<GlideCurve<T>>, CliError> {
    let settings = cfg.settings();
    cfg.specs()
        .iter()
        .map(|spec| {
            info!("in-sample {} month {month}", spec.kind);
            insample_glide::<T>(spec, archive, month, &cfg.horizons, &cfg.insample_years, &settings).map_err(CliError::from)
        })
        .collect()
}

/// Converts curves to `f64` for writing, keeping the table format independent of precision.
fn widen<T: Scalar>(curves: Vec<GlideCurve<T>>) -> Vec<GlideCurve<f64>> {
    curves
        .into_iter()
        .map(|c| GlideCurve {
            model_id: c.model_id,
            target_month: c.target_month,
            protocol: c.protocol,
            horizons: c.horizons,
            rmsfe: c.rmsfe.into_iter().map(|v| v.map(Scalar::as_f64)).collect(),
            gaps: c.gaps,
        })
        .collect()
}

fn report_gaps(curves: &[GlideCurve<f64>]) -> Result<(), CliError> {
    let total: usize = curves.iter().map(|c| c.rmsfe.len()).sum();
    let gaps: usize = curves.iter().map(|c| c.gaps.len()).sum();
    if gaps > 0 {
        warn!("{gaps} of {total} glide points could not be evaluated");
    }
    if gaps == total {
        let first = curves.iter().flat_map(|c| c.gaps.first()).next();
        return Err(CliError::Data(format!("no glide point could be evaluated ({first:?})")));
    }
    Ok(())
}

/// One in-sample glide table per configured month.
pub fn cmd_glide(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let (archive, digest) = load_archive(&cfg.archive_dir)?;
    let mut written = Vec::new();
    for &month in &cfg.months {
        let curves = match cfg.precision {
            Precision::F64 => widen(insample_curves::<f64>(cfg, &archive, month)?),
            Precision::F32 => widen(insample_curves::<f32>(cfg, &archive, month)?),
        };
        report_gaps(&curves)?;
        let mut meta = run_metadata(cfg, "glide", &digest);
        meta.insert("target_month".into(), month.to_string());
        let stem = format!("glide_insample_m{month:02}");
        written.push(write_pair(&cfg.out_dir, &stem, &glide_csv(&curves, &meta), &glide_json(&curves, &meta))?);
    }
    Ok(written)
}

/// One recursive out-of-sample glide table per configured month.
pub fn cmd_oos(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let (archive, digest) = load_archive(&cfg.archive_dir)?;
    let settings = cfg.settings();
    let specs = cfg.specs();
    let mut written = Vec::new();
    for &month in &cfg.months {
        let curves = match cfg.precision {
            Precision::F64 => widen(oos_glide::<f64>(&specs, &archive, month, &cfg.test_years, &cfg.horizons, &settings)?),
            Precision::F32 => widen(oos_glide::<f32>(&specs, &archive, month, &cfg.test_years, &cfg.horizons, &settings)?),
        };
        report_gaps(&curves)?;
        let mut meta = run_metadata(cfg, "oos", &digest);
        meta.insert("target_month".into(), month.to_string());
        let stem = format!("glide_oos_m{month:02}");
        written.push(write_pair(&cfg.out_dir, &stem, &glide_csv(&curves, &meta), &glide_json(&curves, &meta))?);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionRow {
    pub month: u32,
    pub model: String,
    pub fraction: f64,
}

/// Reads the glide tables for the configured months and writes, per month,
/// each model's share of best horizons among FELR, PocketFELR, FEML and
/// PocketFEML, plus a `FEML_family` row for the two forest models combined.
pub fn cmd_best_fraction(cfg: &RunConfig, protocol: &str) -> Result<Vec<FractionRow>, CliError> {
    let tag = match protocol {
        "oos" | "insample" => protocol,
        other => return Err(CliError::Usage(format!("--protocol must be oos or insample, got {other:?}"))),
    };
    let mut rows = Vec::new();
    for &month in &cfg.months {
        let path = cfg.out_dir.join(format!("glide_{tag}_m{month:02}.csv"));
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::from(EvalError::MissingInput(format!("{}: {e}", path.display()))))?;
        let curves: Vec<GlideCurve<f64>> = parse_glide_csv(&text)?
            .into_iter()
            .filter(|c| c.target_month == month && BEST_FRACTION_SET.contains(&c.model_id.as_str()))
            .collect();
        if curves.is_empty() {
            return Err(EvalError::MissingInput(format!("{}: none of {BEST_FRACTION_SET:?}", path.display())).into());
        }
        let ids: Vec<&str> = curves.iter().map(|c| c.model_id.as_str()).collect();
        for (model, fraction) in fraction_best(&curves, &ids)? {
            rows.push(FractionRow { month, model, fraction });
        }
        let family: Vec<&str> = FEML_FAMILY.iter().copied().filter(|f| ids.contains(f)).collect();
        if !family.is_empty() {
            rows.push(FractionRow { month, model: "FEML_family".into(), fraction: fraction_best_group(&curves, &family)? });
        }
    }
    let mut meta = cfg.to_pairs();
    meta.insert("command".into(), "best-frac".into());
    meta.insert("protocol".into(), tag.into());
    meta.insert("code_version".into(), env!("CARGO_PKG_VERSION").into());
    let mut csv = evalglide::metadata_header(&meta);
    csv.push_str("month,model,fraction_best\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.month, r.model, r.fraction));
        println!("{:>2} {:<12} {:.3}", r.month, r.model, r.fraction);
    }
    let json = serde_json::to_string_pretty(&serde_json::json!({ "metadata": meta, "records": rows })).expect("rows serialize");
    write_pair(&cfg.out_dir, &format!("best_fraction_{tag}"), &csv, &json)?;
    Ok(rows)
}

/// The first target month ending on or after `asof`.
pub fn next_target(asof: NaiveDate, month: u32) -> YearMonth {
    let this = YearMonth::new(chrono::Datelike::year(&asof), month);
    if asof <= this.last_day() {
        this
    } else {
        YearMonth::new(this.year + 1, month)
    }
}

fn widen_records<T: Scalar>(r: Vec<ForecastRecord<T>>) -> Vec<ForecastRecord<f64>> {
    r.into_iter()
        .map(|r| ForecastRecord {
            model_id: r.model_id,
            target_month: r.target_month,
            year: r.year,
            asof_date: r.asof_date,
            forecast: r.forecast.as_f64(),
            realized: r.realized.map(Scalar::as_f64),
            error: r.error.map(Scalar::as_f64),
        })
        .collect()
}

fn forecast_one(cfg: &RunConfig, archive: &RawArchive, spec: &ModelSpec, month: u32, asof: NaiveDate) -> Result<ForecastRecord<f64>, CliError> {
    let target = next_target(asof, month);
    let rule = AsofRule::Horizon((target.last_day() - asof).num_days() as u32);
    let settings = cfg.settings();
    Ok(match cfg.precision {
        Precision::F64 => oos_forecast::<f64>(spec, archive, month, rule, target.year, &settings)?,
        Precision::F32 => widen_records(vec![oos_forecast::<f32>(spec, archive, month, rule, target.year, &settings)?]).remove(0),
    })
}

/// Forecasts every configured model and target month from the vintage of `asof`,
/// training on all earlier years.
pub fn cmd_forecast(cfg: &RunConfig, asof: NaiveDate) -> Result<Vec<ForecastRecord<f64>>, CliError> {
    let (archive, digest) = load_archive(&cfg.archive_dir)?;
    let mut records = Vec::new();
    for &month in &cfg.months {
        for spec in cfg.specs() {
            let r = forecast_one(cfg, &archive, &spec, month, asof)?;
            println!("{:<11} {}-{:02} as of {}: {:.3}", r.model_id, r.year, month, r.asof_date, r.forecast);
            records.push(r);
        }
    }
    let mut meta = run_metadata(cfg, "forecast", &digest);
    meta.insert("asof".into(), asof.to_string());
    write_pair(&cfg.out_dir, &format!("forecast_{asof}"), &history_csv(&records, &meta), &history_json(&records, &meta))?;
    Ok(records)
}

fn parse_day(day: &str) -> Result<(u32, u32), CliError> {
    let bad = || CliError::Usage(format!("--day expects MM-DD, got {day:?}"));
    let (m, d) = day.split_once('-').ok_or_else(bad)?;
    let (m, d): (u32, u32) = (m.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?);
    NaiveDate::from_ymd_opt(2000, m, d).ok_or_else(bad)?;
    Ok((m, d))
}

/// Annual out-of-sample forecasts on a fixed calendar day for every test year.
pub fn cmd_history(cfg: &RunConfig, day: &str) -> Result<Vec<PathBuf>, CliError> {
    let (m, d) = parse_day(day)?;
    let (archive, digest) = load_archive(&cfg.archive_dir)?;
    let settings = cfg.settings();
    let rule = AsofRule::CalendarDay { month: m, day: d };
    let mut written = Vec::new();
    for &month in &cfg.months {
        let mut records = Vec::new();
        for spec in cfg.specs() {
            records.extend(match cfg.precision {
                Precision::F64 => evalglide::forecast_history::<f64>(&spec, &archive, month, rule, &cfg.test_years, &settings)?,
                Precision::F32 => widen_records(evalglide::forecast_history::<f32>(&spec, &archive, month, rule, &cfg.test_years, &settings)?),
            });
        }
        let mut meta = run_metadata(cfg, "history", &digest);
        meta.insert("target_month".into(), month.to_string());
        meta.insert("asof_day".into(), format!("{m:02}-{d:02}"));
        let stem = format!("history_m{month:02}_{m:02}-{d:02}");
        written.push(write_pair(&cfg.out_dir, &stem, &history_csv(&records, &meta), &history_json(&records, &meta))?);
    }
    Ok(written)
}

/// Fits one forest on the in-sample years and writes its `β_t` paths.
pub fn cmd_betas(cfg: &RunConfig, kind: ModelKind, horizon: u32) -> Result<Vec<PathBuf>, CliError> {
    if !kind.is_forest() {
        return Err(CliError::Usage(format!("{kind} has constant coefficients; choose a forest model")));
    }
    let (archive, digest) = load_archive(&cfg.archive_dir)?;
    let spec = ModelSpec::of(kind);
    let mut written = Vec::new();
    for &month in &cfg.months {
        let mut ds = build_training_set(&archive, &spec, month, horizon, &cfg.insample_years, cfg.lags)?;
        evalglide::drop_collinear_x(&mut ds);
        let params = MrfParams {
            seed: evalglide::cell_seed(cfg.mrf.seed, kind.id(), month, horizon, 0),
            ..cfg.mrf.clone()
        };
        let forest = fit_forest(&ds, &params)?;
        let paths = forest.beta_paths(&ds)?;
        let mut meta = run_metadata(cfg, "betas", &digest);
        meta.insert("model".into(), kind.id().into());
        meta.insert("target_month".into(), month.to_string());
        meta.insert("horizon_days".into(), horizon.to_string());
        let mut csv = evalglide::metadata_header(&meta);
        csv.push_str(&beta_paths_csv(&ds.years, &ds.x_names, &paths));
        let stem = format!("betas_{}_m{month:02}_h{horizon}", kind.id());
        written.push(write_pair(&cfg.out_dir, &stem, &csv, &forest.to_json())?);
    }
    Ok(written)
}
