//! Seeded stand-in for the four raw source files, written in the same layouts
//! as the published archives so the whole pipeline can run offline.
//!
//! Extent follows a seasonal cycle with a declining trend that is steepest in
//! late summer, plus a persistent daily anomaly. During the melt season the
//! anomaly drifts with the air-temperature anomaly and with the thickness
//! anomaly, so spring thickness and temperature carry information about the
//! September minimum that the extent history alone does not.

use std::f64::consts::TAU;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::{parse_berkeley_at, parse_noaa_co2, parse_nsidc_sie, parse_piomas_sit, IngestError, RawArchive};

pub const SIE_FILE: &str = "N_seaice_extent_daily_v3.0.csv";
pub const SIT_FILE: &str = "PIOMAS.thick.daily.1979.Current.v2.1.dat.gz";
pub const AT_FILE: &str = "Land_and_Ocean_complete.txt";
pub const CO2_FILE: &str = "co2_mm_mlo.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Last day written for the daily sources.
    pub end: NaiveDate,
    /// Alternate-day extent before August 1987 and the winter 1987/88 outage.
    pub realistic_gaps: bool,
    /// Scale on every stochastic term; 0 gives a deterministic archive.
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            end: NaiveDate::from_ymd_opt(2021, 12, 31).expect("valid date"),
            realistic_gaps: true,
            noise: 1.0,
        }
    }
}

/// Raw file contents, byte-for-byte what would be written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFiles {
    pub sie_csv: String,
    pub sit_gz: Vec<u8>,
    pub at_txt: String,
    pub co2_csv: String,
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

fn years_since_1979(d: NaiveDate) -> f64 {
    (d.year() - 1979) as f64 + (d.ordinal() as f64 - 1.0) / 365.25
}

fn climatology(d: NaiveDate) -> f64 {
    let phase = TAU * (d.ordinal() as f64 - 70.0) / 365.25;
    11.6 + 4.1 * phase.cos() - 0.35 * (2.0 * phase).cos()
}

/// Trend per year, largest near the September minimum.
fn trend(d: NaiveDate) -> f64 {
    let phase = TAU * (d.ordinal() as f64 - 258.0) / 365.25;
    -(0.040 + 0.040 * (1.0 + phase.cos()) / 2.0)
}

fn is_melt_season(d: NaiveDate) -> bool {
    (152..=258).contains(&d.ordinal())
}

fn extent_missing(d: NaiveDate, start: NaiveDate) -> bool {
    (d < date(1987, 8, 20) && (d - start).num_days() % 2 == 1) || (d >= date(1987, 12, 3) && d <= date(1988, 1, 12))
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticFiles {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std = |s: f64| Normal::new(0.0, s * cfg.noise.max(0.0)).expect("finite sd");
    let (eps_a, eps_b, eps_t, eps_c) = (std(0.055), std(0.012), std(0.22), std(0.12));

    // Monthly air-temperature anomalies drive the melt-season drift, so draw them first.
    let first_at = 1950;
    let mut at_rows = Vec::new();
    let mut at_state = 0.0;
    for y in first_at..=cfg.end.year() {
        for m in 1..=12u32 {
            if date(y, m, 1) > cfg.end {
                break;
            }
            at_state = 0.5 * at_state + eps_t.sample(&mut rng);
            let trend = 0.019 * (y - 1979) as f64;
            at_rows.push((y, m, trend + at_state));
        }
    }
    let at_of = |d: NaiveDate| {
        let idx = ((d.year() - first_at) * 12 + d.month() as i32 - 1) as usize;
        at_rows[idx].2 - 0.019 * (d.year() - 1979) as f64
    };

    let sie_start = date(1978, 10, 26);
    let sit_start = date(1979, 1, 1);
    let mut sie_csv = String::from(
        "Year, Month, Day,     Extent,    Missing, Source Data\n\
         YYYY,    MM,  DD, 10^6 sq km, 10^6 sq km, Source data product web sites\n",
    );
    let mut sit_txt = String::from("Year  #day  Thickness\n");
    let mut anomaly = 0.0;
    let mut thick = 0.0;
    for d in sie_start.iter_days().take_while(|d| *d <= cfg.end) {
        thick = 0.995 * thick + eps_b.sample(&mut rng);
        anomaly = 0.97 * anomaly + eps_a.sample(&mut rng);
        if is_melt_season(d) {
            anomaly += 0.006 * thick / 0.12 - 0.0035 * at_of(d) / 0.25;
        }
        let t = years_since_1979(d);
        let extent = (climatology(d) + trend(d) * t + anomaly).max(2.0);
        if !(cfg.realistic_gaps && extent_missing(d, sie_start)) {
            sie_csv.push_str(&format!(
                "{:4},    {:02},  {:02},     {:6.3},      0.000, ['ftp://sidads.colorado.edu/pub/DATASETS/nsidc0051_gsfc_nasateam_seaice/final-gsfc/north/daily/{}/']\n",
                d.year(),
                d.month(),
                d.day(),
                extent,
                d.year()
            ));
        }
        if d >= sit_start {
            let phase = TAU * (d.ordinal() as f64 - 125.0) / 365.25;
            let sit = (2.1 + 0.85 * phase.cos() - 0.028 * t + thick).max(0.2);
            sit_txt.push_str(&format!("{:4} {:4} {:8.4}\n", d.year(), d.ordinal(), sit));
        }
    }
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(sit_txt.as_bytes()).expect("in-memory write");
    let sit_gz = enc.finish().expect("in-memory gzip");

    let mut at_txt = String::from(
        "% Monthly land and ocean temperature anomalies (synthetic)\n\
         % Using air temperature above sea ice\n\
         %\n\
         % Year, Month,  Anomaly, Unc.,   Annual Anomaly, Unc.\n\n",
    );
    for &(y, m, v) in &at_rows {
        at_txt.push_str(&format!("  {y:4}    {m:2}    {v:6.3}     0.050      NaN      NaN\n"));
    }
    at_txt.push_str("\n% Using water temperature below sea ice\n%\n");
    for &(y, m, v) in at_rows.iter().take(24) {
        at_txt.push_str(&format!("  {y:4}    {m:2}    {:6.3}     0.050      NaN      NaN\n", v * 0.9));
    }

    let mut co2_csv = String::from(
        "# Monthly mean CO2 mole fraction (synthetic)\n\
         # Missing values are denoted by -99.99\n\
         year,month,decimal date,average,deseasonalized,ndays,sdev,unc\n",
    );
    let mut noise_c = 0.0;
    for y in 1958..=cfg.end.year() {
        for m in 1..=12u32 {
            if (y == 1958 && m < 3) || date(y, m, 1) > cfg.end {
                continue;
            }
            let t = (y - 1979) as f64 + (m as f64 - 0.5) / 12.0;
            noise_c = 0.6 * noise_c + eps_c.sample(&mut rng);
            let deseason = 336.8 + 1.45 * t + 0.0125 * t * t + noise_c;
            let avg = deseason + 3.0 * (TAU * (m as f64 - 2.0) / 12.0).cos();
            let deseason_field = if y == 1958 && m == 6 { -99.99 } else { deseason };
            co2_csv.push_str(&format!(
                "{y},{m},{:.4},{avg:.2},{deseason_field:.2},-1,-9.99,-0.99\n",
                y as f64 + (m as f64 - 0.5) / 12.0
            ));
        }
    }
    SyntheticFiles { sie_csv, sit_gz, at_txt, co2_csv }
}

impl SyntheticFiles {
    /// Writes the four files into `dir` under their archive names.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
        std::fs::create_dir_all(dir).map_err(|e| IngestError::Io { path: dir.display().to_string(), err: e })?;
        let mut paths = Vec::new();
        for (name, bytes) in [
            (SIE_FILE, self.sie_csv.as_bytes()),
            (SIT_FILE, self.sit_gz.as_slice()),
            (AT_FILE, self.at_txt.as_bytes()),
            (CO2_FILE, self.co2_csv.as_bytes()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| IngestError::Io { path: p.display().to_string(), err: e })?;
            paths.push(p);
        }
        Ok(paths)
    }

    /// Parses the files through the regular source parsers.
    pub fn archive(&self) -> Result<RawArchive, IngestError> {
        RawArchive::assemble(
            parse_nsidc_sie(&self.sie_csv)?,
            parse_piomas_sit(&self.sit_gz)?,
            parse_berkeley_at(&self.at_txt)?,
            parse_noaa_co2(&self.co2_csv)?,
        )
    }
}

/// Convenience: generate and parse in one step.
pub fn synthetic_archive(cfg: &SyntheticConfig) -> RawArchive {
    generate(cfg).archive().expect("generated files parse")
}
