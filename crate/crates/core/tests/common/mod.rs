#![allow(dead_code)]

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seaice_glide::features::Dataset;
use seaice_glide::ingest::RawArchive;
use seaice_glide::linalg::Matrix;
use seaice_glide::synthetic::{synthetic_archive, SyntheticConfig};

/// Default synthetic archive, built once per test binary.
pub fn archive() -> &'static RawArchive {
    static ARCHIVE: OnceLock<RawArchive> = OnceLock::new();
    ARCHIVE.get_or_init(|| synthetic_archive(&SyntheticConfig::default()))
}

pub fn seeded_archive(seed: u64) -> RawArchive {
    synthetic_archive(&SyntheticConfig { seed, ..SyntheticConfig::default() })
}

/// Random dataset with an intercept column in X, uniform state columns,
/// and a response whose slope on x1 switches with s0.
pub fn toy_dataset(n: usize, p: usize, q: usize, seed: u64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Matrix::zeros(n, p);
    let mut s = Matrix::zeros(n, q);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 1..p {
            x[(i, j)] = rng.gen_range(-1.0..1.0);
        }
        for j in 0..q {
            s[(i, j)] = rng.gen_range(0.0..10.0);
        }
        let slope = if q > 0 && s[(i, 0)] > 5.0 { 2.0 } else { -1.0 };
        let x1 = if p > 1 { x[(i, 1)] } else { 1.0 };
        y.push(1.0 + slope * x1 + rng.gen_range(-0.3..0.3));
    }
    Dataset {
        target_month: 9,
        horizon_days: 0,
        years: (1979..1979 + n as i32).collect(),
        asof_dates: Vec::new(),
        x_names: (0..p).map(|j| format!("x{j}")).collect(),
        s_names: (0..q).map(|j| format!("s{j}")).collect(),
        x,
        s,
        y,
        excluded: Vec::new(),
        pca: None,
    }
}
