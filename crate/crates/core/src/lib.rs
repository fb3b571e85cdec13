//! Fixed-target Arctic sea-ice extent forecasting: data ingest, vintage-aware
//! features, linear and macroeconomic-random-forest models, and glide-chart
//! evaluation.
//!
//! Numerical code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below name the common concrete types.

pub mod cli;
pub mod evalglide;
pub mod features;
pub mod ingest;
pub mod linalg;
pub mod linear;
pub mod mrf;
pub mod pca;
pub mod scalar;
pub mod synthetic;
pub mod timeseries;

pub type Dataset64 = features::Dataset<f64>;
pub type Dataset32 = features::Dataset<f32>;
pub type LinearFit64 = linear::LinearFit<f64>;
pub type LinearFit32 = linear::LinearFit<f32>;
pub type Forest64 = mrf::Forest<f64>;
pub type Forest32 = mrf::Forest<f32>;
pub type GlideCurve64 = evalglide::GlideCurve<f64>;
pub type GlideCurve32 = evalglide::GlideCurve<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
