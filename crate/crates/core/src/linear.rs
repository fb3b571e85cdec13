//! Least squares and weighted ridge solvers, and the linear forecasters
//! (LinearTrend, FELR, PocketFELR).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Dataset, FeatureRow, ModelKind, ModelSpec, INTERCEPT, TIME};
use crate::linalg::{dot, lstsq_qr, solve_lu, Matrix};
use crate::scalar::Scalar;

/// Relative tolerance for rank decisions.
pub const RANK_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinearError {
    #[error("design matrix is rank deficient ({rows}x{cols})")]
    RankDeficient { rows: usize, cols: usize },
    #[error("weighted normal equations are singular")]
    SingularSystem,
    #[error("weights must be non-negative and not all zero")]
    InvalidWeights,
    #[error("lambda must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("feature mismatch: expected {expected:?}, got {got:?}")]
    FeatureMismatch { expected: Vec<String>, got: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LinearFit<T> {
    pub coefficients: Vec<T>,
    pub fitted: Vec<T>,
    pub residuals: Vec<T>,
}

impl<T: Scalar> LinearFit<T> {
    pub fn predict(&self, x: &[T]) -> T {
        dot(x, &self.coefficients)
    }
}

/// Ordinary least squares by Householder QR.
pub fn ols_fit<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<LinearFit<T>, LinearError> {
    if x.nrows() != y.len() {
        return Err(LinearError::DimensionMismatch(format!("{} rows vs {} labels", x.nrows(), y.len())));
    }
    let coefficients = lstsq_qr(x, y, T::of(RANK_TOL))
        .ok_or(LinearError::RankDeficient { rows: x.nrows(), cols: x.ncols() })?;
    let fitted = x.matvec(&coefficients);
    let residuals = y.iter().zip(&fitted).map(|(&a, &b)| a - b).collect();
    Ok(LinearFit { coefficients, fitted, residuals })
}

/// Weighted sufficient statistics `X'WX`, `X'Wy`, `y'Wy` of a row set.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMoments<T> {
    p: usize,
    xtx: Vec<T>,
    xty: Vec<T>,
    yty: T,
}

impl<T: Scalar> WeightedMoments<T> {
    pub fn new(p: usize) -> Self {
        Self { p, xtx: vec![T::zero(); p * p], xty: vec![T::zero(); p], yty: T::zero() }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn clear(&mut self) {
        self.xtx.iter_mut().for_each(|v| *v = T::zero());
        self.xty.iter_mut().for_each(|v| *v = T::zero());
        self.yty = T::zero();
    }

    /// Adds row `x` with response `y` at weight `w`.
    #[inline]
    pub fn add(&mut self, x: &[T], y: T, w: T) {
        let p = self.p;
        for i in 0..p {
            let wx = w * x[i];
            self.xty[i] += wx * y;
            for j in i..p {
                self.xtx[i * p + j] += wx * x[j];
            }
        }
        self.yty += w * y * y;
    }

    /// Minimizer of `Σ w (y - xβ)² + λ‖β - prior‖²` and the objective value there.
    pub fn solve(&self, lambda: T, prior: &[T]) -> Option<(Vec<T>, T)> {
        let p = self.p;
        let mut a = Matrix::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                a[(i, j)] = self.xtx[i * p + j];
                a[(j, i)] = self.xtx[i * p + j];
            }
        }
        let mut rhs = self.xty.clone();
        if lambda != T::zero() {
            for i in 0..p {
                a[(i, i)] += lambda;
                rhs[i] += lambda * prior[i];
            }
        }
        let beta = solve_lu(&a, &rhs, T::of(PIVOT_TOL))?;
        Some((beta.clone(), self.objective(&beta, lambda, prior)))
    }

    /// Penalized weighted SSR at `beta`.
    pub fn objective(&self, beta: &[T], lambda: T, prior: &[T]) -> T {
        let p = self.p;
        let two = T::one() + T::one();
        let mut quad = T::zero();
        for i in 0..p {
            let mut s = self.xtx[i * p + i] * beta[i];
            for j in 0..p {
                if j != i {
                    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                    s += self.xtx[lo * p + hi] * beta[j];
                }
            }
            quad += beta[i] * s;
        }
        let ssr = self.yty - two * dot(beta, &self.xty) + quad;
        let pen: T = beta.iter().zip(prior).map(|(&b, &q)| (b - q) * (b - q)).sum();
        ssr.max(T::zero()) + lambda * pen
    }
}

/// Weighted ridge regression shrunk toward `beta_prior`:
/// minimizes `Σ w_t (y_t - X_t β)² + λ‖β - beta_prior‖²` in closed form.
pub fn ridge_fit<T: Scalar>(
    x: &Matrix<T>,
    y: &[T],
    weights: &[T],
    lambda: T,
    beta_prior: &[T],
) -> Result<Vec<T>, LinearError> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n || weights.len() != n || beta_prior.len() != p {
        return Err(LinearError::DimensionMismatch(format!(
            "x {n}x{p}, y {}, weights {}, prior {}",
            y.len(),
            weights.len(),
            beta_prior.len()
        )));
    }
    if weights.iter().any(|w| *w < T::zero() || !w.is_finite()) || weights.iter().all(|w| *w == T::zero()) {
        return Err(LinearError::InvalidWeights);
    }
    if lambda < T::zero() {
        return Err(LinearError::NegativeLambda(lambda.as_f64()));
    }
    let mut m = WeightedMoments::new(p);
    for i in 0..n {
        if weights[i] != T::zero() {
            m.add(x.row(i), y[i], weights[i]);
        }
    }
    m.solve(lambda, beta_prior).map(|(b, _)| b).ok_or(LinearError::SingularSystem)
}

/// Names of the columns a linear model actually regresses on.
pub fn linear_columns(kind: ModelKind, x_names: &[String]) -> Vec<String> {
    match kind {
        ModelKind::LinearTrend => vec![INTERCEPT.to_string(), TIME.to_string()],
        _ => x_names.to_vec(),
    }
}

/// Fits OLS on the training set and returns `x_new · β`.
pub fn forecast_linear<T: Scalar>(spec: &ModelSpec, train: &Dataset<T>, x_new: &FeatureRow) -> Result<T, LinearError> {
    let cols = linear_columns(spec.kind, &train.x_names);
    if x_new.names != cols {
        return Err(LinearError::FeatureMismatch { expected: cols, got: x_new.names.clone() });
    }
    let idx: Vec<usize> = cols
        .iter()
        .map(|c| {
            train.x_names.iter().position(|n| n == c).ok_or_else(|| LinearError::FeatureMismatch {
                expected: cols.clone(),
                got: train.x_names.clone(),
            })
        })
        .collect::<Result<_, _>>()?;
    let fit = ols_fit(&train.x.select_columns(&idx), &train.y)?;
    let x: Vec<T> = x_new.values.iter().map(|&v| T::of(v)).collect();
    Ok(fit.predict(&x))
}
