//! Acceptance checks. Prints one line per criterion and exits nonzero if a
//! hard criterion fails. Criteria on the real archives run when
//! `SEAICE_ARCHIVE_DIR` points at a directory holding the four raw files.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seaice_glide::cli::{cmd_glide, cmd_ingest, load_archive, RunConfig};
use seaice_glide::evalglide::{
    default_horizons, fraction_best_group, insample_glide, oos_forecast, oos_glide, EvalSettings, GlideCurve,
};
use seaice_glide::features::{build_oos_split, year_row, AsofRule, Dataset, ModelKind, ModelSpec};
use seaice_glide::ingest::{parse_berkeley_at, parse_noaa_co2, parse_nsidc_sie, parse_piomas_sit, LagConfig, RawArchive};
use seaice_glide::linalg::{dot, Matrix};
use seaice_glide::linear::{ols_fit, ridge_fit};
use seaice_glide::mrf::{
    draw_bag, draw_features, fit_forest, podium_weights, split_search, tie_tolerance, tree_rng, MrfParams,
};
use seaice_glide::pca::pca_scores;
use seaice_glide::synthetic::{generate, SyntheticConfig};
use seaice_glide::timeseries::{DailySeries, MonthlySeries, YearMonth};

enum Verdict {
    Pass(String),
    Fail(String),
    /// Reported but not enforced.
    Soft { met: bool, detail: String },
    NotEvaluated(String),
}

// ---------------------------------------------------------------- criterion 1

enum PlainNode {
    Split { feature: usize, threshold: f64, left: Box<PlainNode>, right: Box<PlainNode> },
    Leaf(f64),
}

impl PlainNode {
    fn predict(&self, s: &[f64]) -> f64 {
        match self {
            PlainNode::Split { feature, threshold, left, right } => {
                if s[*feature] <= *threshold {
                    left.predict(s)
                } else {
                    right.predict(s)
                }
            }
            PlainNode::Leaf(v) => *v,
        }
    }

    fn leaves(&self) -> usize {
        match self {
            PlainNode::Split { left, right, .. } => left.leaves() + right.leaves(),
            PlainNode::Leaf(_) => 1,
        }
    }
}

fn sse(y: &[f64], rows: &[usize]) -> f64 {
    let mean = rows.iter().fold(0.0, |a, &r| a + y[r]) / rows.len() as f64;
    rows.iter().fold(0.0, |a, &r| a + (y[r] - mean) * (y[r] - mean))
}

fn halfway(lo: f64, hi: f64) -> f64 {
    let c = lo + (hi - lo) / 2.0;
    if c >= hi {
        lo
    } else {
        c
    }
}

/// CART variance-reduction split: minimal left + right SSE, earliest
/// (feature, threshold) among ties.
fn plain_split(s: &Matrix<f64>, y: &[f64], members: &[usize], features: &[usize], min_leaf: usize) -> Option<(usize, f64)> {
    let m = members.len();
    let mut cands = Vec::new();
    for &j in features {
        let mut order = members.to_vec();
        order.sort_by(|&a, &b| s[(a, j)].partial_cmp(&s[(b, j)]).unwrap().then(a.cmp(&b)));
        for k in min_leaf..=m - min_leaf {
            let (lo, hi) = (s[(order[k - 1], j)], s[(order[k], j)]);
            if lo < hi {
                cands.push((j, halfway(lo, hi), sse(y, &order[..k]) + sse(y, &order[k..])));
            }
        }
    }
    let min = cands.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    let scale = members.iter().fold(0.0, |a, &r| a + y[r] * y[r]);
    let tol = tie_tolerance(scale.max(min.abs()));
    cands.into_iter().find(|c| c.2 <= min + tol).map(|c| (c.0, c.1))
}

fn plain_grow(s: &Matrix<f64>, y: &[f64], members: Vec<usize>, min_leaf: usize, mtry: usize, rng: &mut ChaCha8Rng) -> PlainNode {
    if members.len() >= 2 * min_leaf && s.ncols() > 0 {
        let features = draw_features(rng, s.ncols(), mtry);
        if let Some((feature, threshold)) = plain_split(s, y, &members, &features, min_leaf) {
            let (l, r): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| s[(i, feature)] <= threshold);
            let left = plain_grow(s, y, l, min_leaf, mtry, rng);
            let right = plain_grow(s, y, r, min_leaf, mtry, rng);
            return PlainNode::Split { feature, threshold, left: Box::new(left), right: Box::new(right) };
        }
    }
    PlainNode::Leaf(members.iter().fold(0.0, |a, &r| a + y[r]) / members.len() as f64)
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut ds = common::toy_dataset(30, 1, 6, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..30 {
        let s = ds.s.row(i).to_vec();
        ds.y[i] = (s[0] / 3.0).sin() + 0.1 * s[1] - if s[2] > 6.0 { 1.0 } else { 0.0 } + rng.gen_range(-0.2..0.2);
    }
    let params = MrfParams {
        zeta: 0.0,
        lambda: 0.0,
        bag_block_len_years: 1,
        n_trees: 200,
        seed: 99,
        ..MrfParams::default()
    };
    let forest = fit_forest(&ds, &params).expect("forest fits");
    let min_leaf = params.min_leaf(1);
    let mtry = params.mtry(ds.n_s());
    let trees: Vec<PlainNode> = (0..params.n_trees)
        .map(|t| {
            let mut rng = tree_rng(params.seed, t);
            let bag = draw_bag(&ds.years, params.row_subsample_rate, 1, &mut rng);
            plain_grow(&ds.s, &ds.y, bag, min_leaf, mtry, &mut rng)
        })
        .collect();
    let mut probes: Vec<Vec<f64>> = (0..30).map(|i| ds.s.row(i).to_vec()).collect();
    probes.extend((0..30).map(|_| (0..6).map(|_| rng.gen_range(0.0..10.0)).collect()));
    let mut mismatches = 0;
    for s in &probes {
        let plain = trees.iter().fold(0.0, |a, t| a + t.predict(s)) / trees.len() as f64;
        let mrf = forest.predict(&[1.0], s).unwrap();
        if plain.to_bits() != mrf.to_bits() {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let leaves = trees.iter().map(PlainNode::leaves).sum::<usize>() as f64 / trees.len() as f64;
    let detail = format!("{} probes, {mismatches} mismatches, {leaves:.1} leaves per tree, {secs:.2}s", probes.len());
    if mismatches == 0 && leaves > 1.0 && secs < 10.0 {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Verdict {
    let ds = common::toy_dataset(40, 5, 8, 21);
    let params = MrfParams {
        min_leaf_obs: Some(40),
        lambda: 1e-8,
        row_subsample_rate: 1.0,
        n_trees: 50,
        ..MrfParams::default()
    };
    let forest = fit_forest(&ds, &params).expect("forest fits");
    let felr = ols_fit(&ds.x, &ds.y).expect("full rank").coefficients;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let mut x = vec![1.0];
        x.extend((1..5).map(|_| rng.gen_range(-2.0..2.0)));
        let s: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..10.0)).collect();
        worst = worst.max((forest.predict(&x, &s).unwrap() - dot(&x, &felr)).abs());
    }
    let detail = format!("max |FEML - FELR| = {worst:.3e} over 25 forecasts");
    if worst <= 1e-6 {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ---------------------------------------------------------------- criterion 3

/// Penalized weighted SSR of the best ridge fit on one side of a split,
/// weights from the podium kernel around every side member.
fn side_objective(ds: &Dataset<f64>, side: &[usize], zeta: f64, lambda: f64, prior: &[f64]) -> f64 {
    let n = ds.n_rows();
    let mut w = vec![0.0f64; n];
    for &t in side {
        for r in t.saturating_sub(2)..=(t + 2).min(n - 1) {
            let k = zeta.powi((r as i64 - t as i64).unsigned_abs() as i32);
            w[r] = w[r].max(k);
        }
    }
    let rows: Vec<usize> = (0..n).filter(|&r| w[r] > 0.0).collect();
    let x = ds.x.select_rows(&rows);
    let y: Vec<f64> = rows.iter().map(|&r| ds.y[r]).collect();
    let wr: Vec<f64> = rows.iter().map(|&r| w[r]).collect();
    let beta = ridge_fit(&x, &y, &wr, lambda, prior).expect("ridge solves");
    let ssr: f64 = (0..rows.len()).map(|i| wr[i] * (y[i] - dot(x.row(i), &beta)).powi(2)).sum();
    ssr + lambda * beta.iter().zip(prior).map(|(b, p)| (b - p) * (b - p)).sum::<f64>()
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let params = MrfParams { min_leaf_obs: Some(3), ..MrfParams::default() };
    let mut failures = Vec::new();
    for inst in 0..50u64 {
        let ds = common::toy_dataset(12, 2, 3, 1000 + inst);
        let mut rng = ChaCha8Rng::seed_from_u64(inst);
        let mut members: Vec<usize> = (0..12).collect();
        let drop = rng.gen_range(0..4);
        for _ in 0..drop {
            members.remove(rng.gen_range(0..members.len()));
        }
        let prior: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let features = [0usize, 1, 2];
        let got = split_search(&ds, &members, &features, &params, &prior).expect("a split exists");
        let mut best: Option<(usize, f64, f64)> = None;
        for &j in &features {
            let mut vals: Vec<f64> = members.iter().map(|&r| ds.s[(r, j)]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            for pair in vals.windows(2) {
                let c = halfway(pair[0], pair[1]);
                let (l, r): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&t| ds.s[(t, j)] <= c);
                if l.len() < 3 || r.len() < 3 {
                    continue;
                }
                let obj = side_objective(&ds, &l, params.zeta, params.lambda, &prior)
                    + side_objective(&ds, &r, params.zeta, params.lambda, &prior);
                if best.is_none_or(|b| obj < b.2) {
                    best = Some((j, c, obj));
                }
            }
        }
        let (j, c, obj) = best.expect("oracle finds a split");
        let rel = (got.objective - obj).abs() / obj.abs().max(1.0);
        if got.feature != j || got.threshold != c || rel > 1e-9 {
            failures.push(format!("#{inst}: got ({}, {}, {}) want ({j}, {c}, {obj})", got.feature, got.threshold, got.objective));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if failures.is_empty() && secs < 30.0 {
        Verdict::Pass(format!("50/50 instances match, {secs:.2}s"))
    } else {
        Verdict::Fail(format!("{} mismatches ({secs:.2}s): {}", failures.len(), failures.join("; ")))
    }
}

// ------------------------------------------------------------ criteria 4 to 6

fn real_archive() -> Option<Result<RawArchive, String>> {
    let dir = PathBuf::from(std::env::var_os("SEAICE_ARCHIVE_DIR")?);
    let cache = tempfile::tempdir().expect("tempdir");
    let cfg = RunConfig { data_dir: dir, archive_dir: cache.path().to_path_buf(), ..RunConfig::default() };
    Some(
        cmd_ingest(&cfg, false)
            .and_then(|_| load_archive(cache.path()))
            .map(|(a, _)| a)
            .map_err(|e| e.to_string()),
    )
}

fn insample(kind: ModelKind, archive: &RawArchive, month: u32) -> GlideCurve<f64> {
    let years: Vec<i32> = (1979..=2021).collect();
    insample_glide(&ModelSpec::of(kind), archive, month, &default_horizons(), &years, &EvalSettings::default())
        .expect("glide evaluates")
}

fn at_horizon(c: &GlideCurve<f64>, h: u32) -> Option<f64> {
    c.horizons.iter().position(|&x| x == h).and_then(|i| c.rmsfe[i])
}

fn criterion_4(archive: &RawArchive, label: &str) -> Verdict {
    let felr = insample(ModelKind::Felr, archive, 9);
    let trend = insample(ModelKind::LinearTrend, archive, 9);
    let h0 = at_horizon(&felr, 0);
    let vals: Vec<f64> = trend.rmsfe.iter().flatten().copied().collect();
    let spread = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max) - vals.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = format!("{label}: FELR h0 RMSFE = {:.3e}, LinearTrend spread = {spread:e} over {} horizons", h0.unwrap_or(f64::NAN), vals.len());
    if h0.is_some_and(|v| v < 1e-8) && vals.len() == 121 && spread == 0.0 {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn criterion_5(archive: &RawArchive) -> Verdict {
    let felr = at_horizon(&insample(ModelKind::Felr, archive, 9), 10);
    let trend = at_horizon(&insample(ModelKind::LinearTrend, archive, 9), 10);
    match (felr, trend) {
        (Some(f), Some(t)) => {
            let detail = format!("FELR h10 {f:.4} vs 0.4 x LinearTrend {:.4}", 0.4 * t);
            if f < 0.4 * t {
                Verdict::Pass(detail)
            } else {
                Verdict::Fail(detail)
            }
        }
        _ => Verdict::Fail("horizon 10 not evaluated".into()),
    }
}

fn criterion_6(archive: &RawArchive) -> Verdict {
    let settings = EvalSettings::default();
    let test_years: Vec<i32> = (2012..=2021).collect();
    let sep_h: Vec<u32> = (45..=90).rev().collect();
    let sep = oos_glide::<f64>(
        &[ModelSpec::of(ModelKind::Felr), ModelSpec::of(ModelKind::PocketFeml)],
        archive,
        9,
        &test_years,
        &sep_h,
        &settings,
    )
    .expect("September OOS");
    let gain = sep[0]
        .rmsfe
        .iter()
        .zip(&sep[1].rmsfe)
        .filter_map(|(f, p)| Some(f.as_ref()? - p.as_ref()?))
        .fold(f64::NEG_INFINITY, f64::max);
    let kinds = [ModelKind::Felr, ModelKind::PocketFelr, ModelKind::Feml, ModelKind::PocketFeml];
    let specs: Vec<ModelSpec> = kinds.iter().map(|&k| ModelSpec::of(k)).collect();
    let oct = oos_glide::<f64>(&specs, archive, 10, &test_years, &default_horizons(), &settings).expect("October OOS");
    let family = fraction_best_group(&oct, &["FEML", "PocketFEML"]).expect("fraction");
    Verdict::Soft {
        met: gain > 0.05 && family > 0.75,
        detail: format!("max PocketFEML gain over FELR in 90..45 (Sep) = {gain:.4}; FEML-family fraction-best (Oct) = {family:.3}"),
    }
}

// ---------------------------------------------------------------- criterion 7

fn perturbed_archive(asof: NaiveDate, seed: u64) -> (RawArchive, RawArchive) {
    let files = generate(&SyntheticConfig::default());
    let sie = parse_nsidc_sie(&files.sie_csv).unwrap();
    let sit = parse_piomas_sit(&files.sit_gz).unwrap();
    let at = parse_berkeley_at(&files.at_txt).unwrap();
    let co2 = parse_noaa_co2(&files.co2_csv).unwrap();
    let base = RawArchive::assemble(sie.clone(), sit.clone(), at.clone(), co2.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bump = |s: &DailySeries| {
        let mut out = s.clone();
        for (d, v) in s.iter() {
            if d > asof {
                out.set(d, v.map(|v| v * rng.gen_range(0.5..1.5) + rng.gen_range(-1.0..1.0)));
            }
        }
        out
    };
    let (sie2, sit2) = (bump(&sie), bump(&sit));
    let mut bump_m = |s: &MonthlySeries| {
        let mut out = s.clone();
        for (m, v) in s.iter() {
            if m.last_day() > asof {
                out.set(m, v + rng.gen_range(-5.0..5.0));
            }
        }
        out
    };
    let (at2, co22) = (bump_m(&at), bump_m(&co2));
    (base, RawArchive::assemble(sie2, sit2, at2, co22).unwrap())
}

fn criterion_7() -> Verdict {
    let lags = LagConfig::default();
    let settings = EvalSettings { mrf: MrfParams { n_trees: 25, ..MrfParams::default() }, ..EvalSettings::default() };
    let mut checks = 0usize;
    let mut failures = Vec::new();
    // Recent as-of dates exercise OOS fits; early filled days exercise the fill boundary.
    let base = common::archive();
    let filled: Vec<NaiveDate> = base
        .filled_days()
        .iter()
        .copied()
        .filter(|d| (7..=9).contains(&d.month()) && d.year() >= 1980)
        .step_by(40)
        .take(4)
        .collect();
    let mut cases: Vec<(NaiveDate, u32)> = vec![
        (NaiveDate::from_ymd_opt(2015, 8, 13).unwrap(), 9),
        (NaiveDate::from_ymd_opt(2019, 6, 14).unwrap(), 9),
        (NaiveDate::from_ymd_opt(2017, 9, 30).unwrap(), 9),
        (NaiveDate::from_ymd_opt(2020, 7, 31).unwrap(), 10),
    ];
    cases.extend(filled.iter().map(|&d| (d, 9)));
    for (i, &(asof, month)) in cases.iter().enumerate() {
        let (a, b) = perturbed_archive(asof, i as u64);
        let target = YearMonth::new(asof.year(), month);
        let rule = AsofRule::Horizon((target.last_day() - asof).num_days() as u32);
        for kind in ModelKind::ALL {
            let spec = ModelSpec::of(kind);
            let ra = year_row(&a, &spec, target, rule, lags).map(|r| (r.x, r.s)).map_err(|e| e.to_string());
            let rb = year_row(&b, &spec, target, rule, lags).map(|r| (r.x, r.s)).map_err(|e| e.to_string());
            checks += 1;
            if ra != rb {
                failures.push(format!("{kind} row on {asof}"));
            }
            if asof.year() < 2000 {
                continue;
            }
            let train: Vec<i32> = (1979..target.year).collect();
            let sa = build_oos_split(&a, &spec, month, rule, &train, target.year, lags).map(|(d, h)| (d, h.x, h.s));
            let sb = build_oos_split(&b, &spec, month, rule, &train, target.year, lags).map(|(d, h)| (d, h.x, h.s));
            checks += 1;
            match (&sa, &sb) {
                (Ok(x), Ok(y)) if x == y => {}
                _ => failures.push(format!("{kind} OOS training set on {asof}")),
            }
            if let (Ok((da, ..)), Ok((db, ..))) = (&sa, &sb) {
                checks += 1;
                let same_fit = if kind.is_forest() {
                    let p = MrfParams { n_trees: 10, ..MrfParams::default() };
                    fit_forest(da, &p).map(|f| f.to_json()).ok() == fit_forest(db, &p).map(|f| f.to_json()).ok()
                } else {
                    ols_fit(&da.x, &da.y).ok() == ols_fit(&db.x, &db.y).ok()
                };
                if !same_fit {
                    failures.push(format!("{kind} OOS fit on {asof}"));
                }
            }
            let fa = oos_forecast::<f64>(&spec, &a, month, rule, target.year, &settings).map(|r| r.forecast.to_bits());
            let fb = oos_forecast::<f64>(&spec, &b, month, rule, target.year, &settings).map(|r| r.forecast.to_bits());
            checks += 1;
            if fa.is_err() || fa.as_ref().ok() != fb.as_ref().ok() {
                failures.push(format!("{kind} forecast on {asof}"));
            }
        }
    }
    if failures.is_empty() {
        Verdict::Pass(format!("{checks} comparisons over {} as-of dates ({} filled days), all identical", cases.len(), filled.len()))
    } else {
        Verdict::Fail(format!("{} of {checks} differ: {}", failures.len(), failures.join("; ")))
    }
}

// ---------------------------------------------------------------- criterion 8

/// Plain gradient descent on the penalized weighted least-squares objective.
fn descend(x: &Matrix<f64>, y: &[f64], w: &[f64], lambda: f64, prior: &[f64]) -> Vec<f64> {
    let (n, p) = (x.nrows(), x.ncols());
    // Lipschitz bound of the gradient: 2 (trace(X'WX) + λ).
    let lip = 2.0 * ((0..n).map(|i| w[i] * dot(x.row(i), x.row(i))).sum::<f64>() + lambda);
    let mut beta = vec![0.0; p];
    for _ in 0..2_000_000 {
        let mut g: Vec<f64> = beta.iter().zip(prior).map(|(b, q)| 2.0 * lambda * (b - q)).collect();
        for i in 0..n {
            let r = dot(x.row(i), &beta) - y[i];
            for j in 0..p {
                g[j] += 2.0 * w[i] * r * x[(i, j)];
            }
        }
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-11 {
            break;
        }
        for j in 0..p {
            beta[j] -= g[j] / lip;
        }
    }
    beta
}

fn criterion_8() -> Verdict {
    let podium = podium_weights(0.25f64);
    if podium != [0.0625, 0.25, 1.0, 0.25, 0.0625] {
        return Verdict::Fail(format!("podium_weights(0.25) = {podium:?}"));
    }
    let mut worst: f64 = 0.0;
    for inst in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + inst);
        let (n, p) = (rng.gen_range(6..16), rng.gen_range(1..5));
        let mut x = Matrix::zeros(n, p);
        for i in 0..n {
            x[(i, 0)] = 1.0;
            for j in 1..p {
                x[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| podium[rng.gen_range(0..5)]).collect();
        let lambda = rng.gen_range(0.1..2.0);
        let prior: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fit = ridge_fit(&x, &y, &w, lambda, &prior).expect("ridge solves");
        let gd = descend(&x, &y, &w, lambda, &prior);
        worst = fit.iter().zip(&gd).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    let detail = format!("podium exact; max |ridge - GD| = {worst:.2e} over 20 instances");
    if worst <= 1e-6 {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Verdict {
    let root = tempfile::tempdir().expect("tempdir");
    let raw = root.path().join("raw");
    generate(&SyntheticConfig::default()).write_to(&raw).expect("fixtures written");
    let mut cfg = RunConfig { data_dir: raw, archive_dir: root.path().join("archive"), ..RunConfig::default() };
    cfg.models = vec![ModelKind::Felr, ModelKind::PocketFelr, ModelKind::Feml, ModelKind::PocketFeml];
    cfg.months = vec![9];
    if let Err(e) = cmd_ingest(&cfg, false) {
        return Verdict::Fail(format!("ingest: {e}"));
    }
    let mut outputs = Vec::new();
    let mut first_run = Duration::ZERO;
    for run in 0..2 {
        cfg.out_dir = root.path().join(format!("out{run}"));
        let start = Instant::now();
        let paths = match cmd_glide(&cfg) {
            Ok(p) => p,
            Err(e) => return Verdict::Fail(format!("glide: {e}")),
        };
        if run == 0 {
            first_run = start.elapsed();
        }
        let csv = std::fs::read(&paths[0]).unwrap();
        let json = std::fs::read(paths[0].with_extension("json")).unwrap();
        outputs.push((csv, json));
    }
    let identical = outputs[0] == outputs[1];
    let rows = String::from_utf8_lossy(&outputs[0].0).lines().filter(|l| !l.starts_with('#')).count() - 1;
    let secs = first_run.as_secs_f64();
    let detail = format!("{rows} rows, byte-identical = {identical}, one run {secs:.1}s (limit 600s)");
    if identical && rows == 4 * 121 && secs < 600.0 {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// --------------------------------------------------------------- criterion 10

fn criterion_10() -> Verdict {
    let (n, p, k) = (40, 20, 5);
    let mut worst: f64 = 0.0;
    for inst in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + inst);
        // Correlated columns so the spectrum is well separated.
        let latent: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mix: Vec<Vec<f64>> = (0..4).map(|_| (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..p).map(|j| (0..4).map(|l| latent[i][l] * mix[l][j]).sum::<f64>() * (j + 1) as f64 + rng.gen_range(-0.3..0.3) + 5.0).collect())
            .collect();
        let m = Matrix::from_rows(&rows);
        let (scores, _) = pca_scores(&m, k).expect("pca");

        let mut z = DMatrix::<f64>::zeros(n, p);
        for j in 0..p {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            for i in 0..n {
                z[(i, j)] = (col[i] - mean) / sd;
            }
        }
        let cov = z.transpose() * &z / (n - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        for (c, &e) in order.iter().take(k).enumerate() {
            let oracle = &z * eig.eigenvectors.column(e);
            let sign = if (0..n).map(|i| oracle[i] * scores[(i, c)]).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            for i in 0..n {
                worst = worst.max((sign * oracle[i] - scores[(i, c)]).abs());
            }
        }
    }
    let detail = format!("max |score - oracle| = {worst:.2e} over 10 matrices 40x20, k=5");
    if worst <= 1e-8 {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ---------------------------------------------------------------------- main

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        }
    }
}

fn main() {
    let names = [
        "RF restriction",
        "linear collapse",
        "split-search oracle",
        "FELR h0 exact, LinearTrend flat",
        "FELR h10 < 40% of LinearTrend",
        "PocketFEML gain, FEML-family share (soft)",
        "no-lookahead",
        "podium and ridge",
        "determinism and runtime",
        "PCA oracle",
    ];
    let real = if std::env::var("ACCEPTANCE_ONLY").is_ok_and(|v| !v.contains('4') && !v.contains('5') && !v.contains('6')) {
        None
    } else {
        real_archive()
    };
    let real_missing = "SEAICE_ARCHIVE_DIR not set; real archives unavailable offline";
    // ACCEPTANCE_ONLY=3,7 runs a subset.
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut hard_failures = 0;
    for (i, name) in names.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let verdict = guarded(|| match id {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => match &real {
                Some(Ok(a)) => criterion_4(a, "real archive"),
                Some(Err(e)) => Verdict::Fail(format!("real archive: {e}")),
                None => criterion_4(common::archive(), "synthetic archive (real unavailable)"),
            },
            5 | 6 => match &real {
                Some(Ok(a)) if id == 5 => criterion_5(a),
                Some(Ok(a)) => criterion_6(a),
                Some(Err(e)) => Verdict::Fail(format!("real archive: {e}")),
                None => Verdict::NotEvaluated(real_missing.into()),
            },
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(),
            _ => criterion_10(),
        });
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                hard_failures += 1;
                ("FAIL", d)
            }
            Verdict::Soft { met: true, detail } => ("PASS", detail),
            Verdict::Soft { met: false, detail } => ("SOFT-FAIL", detail),
            Verdict::NotEvaluated(d) => ("NOT EVALUATED", d),
        };
        println!("criterion {id:>2} [{tag}] {name}: {detail}");
    }
    if hard_failures > 0 {
        println!("{hard_failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
