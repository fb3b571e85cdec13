//! Principal components of a standardized feature matrix.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{symmetric_eigen, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PcaError {
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("fewer than 2 informative columns ({0})")]
    DegenerateMatrix(usize),
    #[error("requested {k} components but at most {max} are available")]
    TooManyComponents { k: usize, max: usize },
    #[error("row has {got} columns, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A fitted projection: which input columns survived, their standardization,
/// and the unit loading vectors (one column per component).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PcaModel<T> {
    pub n_input_columns: usize,
    pub kept_columns: Vec<usize>,
    pub means: Vec<T>,
    pub scales: Vec<T>,
    pub loadings: Matrix<T>,
    /// Variance of each retained component (eigenvalue of the correlation matrix).
    pub component_variance: Vec<T>,
    /// Sum of all eigenvalues, i.e. the number of kept columns.
    pub total_variance: T,
}

impl<T: Scalar> PcaModel<T> {
    pub fn n_components(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn explained_variance_ratio(&self) -> Vec<T> {
        self.component_variance.iter().map(|&v| v / self.total_variance).collect()
    }

    /// Projects one raw row with the stored standardization and loadings.
    pub fn project(&self, row: &[T]) -> Result<Vec<T>, PcaError> {
        if row.len() != self.n_input_columns {
            return Err(PcaError::DimensionMismatch { expected: self.n_input_columns, got: row.len() });
        }
        let z: Vec<T> = self
            .kept_columns
            .iter()
            .enumerate()
            .map(|(k, &j)| (row[j] - self.means[k]) / self.scales[k])
            .collect();
        Ok((0..self.n_components())
            .map(|c| z.iter().enumerate().map(|(i, &zi)| zi * self.loadings[(i, c)]).sum())
            .collect())
    }

    pub fn project_matrix(&self, m: &Matrix<T>) -> Result<Matrix<T>, PcaError> {
        let rows: Result<Vec<Vec<T>>, _> = (0..m.nrows()).map(|i| self.project(m.row(i))).collect();
        let rows = rows?;
        Ok(if rows.is_empty() { Matrix::zeros(0, self.n_components()) } else { Matrix::from_rows(&rows) })
    }
}

/// Standardizes columns (sample standard deviation), drops zero-variance
/// columns, and returns the top-`k` component scores with the fitted model.
///
/// Components are ordered by decreasing variance. Each loading vector is
/// signed so its largest-magnitude entry is positive.
pub fn pca_scores<T: Scalar>(m: &Matrix<T>, k: usize) -> Result<(Matrix<T>, PcaModel<T>), PcaError> {
    let (n, p) = (m.nrows(), m.ncols());
    if n < 2 {
        return Err(PcaError::TooFewRows(n));
    }
    let nm1 = T::of_usize(n - 1);
    let mut kept = Vec::new();
    let mut means = Vec::new();
    let mut scales = Vec::new();
    for j in 0..p {
        let col = m.column(j);
        let mean = col.iter().copied().sum::<T>() / T::of_usize(n);
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nm1;
        let sd = var.sqrt();
        let floor = T::epsilon() * T::of(64.0) * (T::one() + mean.abs());
        if sd > floor && sd.is_finite() {
            kept.push(j);
            means.push(mean);
            scales.push(sd);
        }
    }
    if kept.len() < p {
        warn!("PCA: dropped {} zero-variance column(s) of {p}", p - kept.len());
    }
    let q = kept.len();
    if q < 2 {
        return Err(PcaError::DegenerateMatrix(q));
    }
    let max = (n - 1).min(q);
    if k > max {
        return Err(PcaError::TooManyComponents { k, max });
    }

    let mut z = Matrix::zeros(n, q);
    for i in 0..n {
        for (c, &j) in kept.iter().enumerate() {
            z[(i, c)] = (m[(i, j)] - means[c]) / scales[c];
        }
    }

    let mut loadings = Matrix::zeros(q, k);
    let mut component_variance = Vec::with_capacity(k);
    if q <= n {
        let cov = z.transpose().matmul(&z).map(|v| v / nm1);
        let (vals, vecs) = symmetric_eigen(&cov);
        for c in 0..k {
            component_variance.push(vals[c].max(T::zero()));
            for i in 0..q {
                loadings[(i, c)] = vecs[(i, c)];
            }
        }
    } else {
        // Wide matrix: diagonalize the n x n Gram matrix instead and map the
        // eigenvectors back through z^T.
        let gram = z.matmul(&z.transpose()).map(|v| v / nm1);
        let (vals, vecs) = symmetric_eigen(&gram);
        let tiny = vals[0].abs() * T::epsilon() * T::of_usize(n.max(q));
        for c in 0..k {
            let lam = vals[c];
            component_variance.push(lam.max(T::zero()));
            if lam <= tiny {
                warn!("PCA: component {} has zero variance", c + 1);
                continue;
            }
            let u = vecs.column(c);
            let denom = (lam * nm1).sqrt();
            for i in 0..q {
                let v: T = (0..n).map(|r| z[(r, i)] * u[r]).sum();
                loadings[(i, c)] = v / denom;
            }
        }
    }

    for c in 0..k {
        let mut best = T::zero();
        for i in 0..q {
            if loadings[(i, c)].abs() > best.abs() {
                best = loadings[(i, c)];
            }
        }
        if best < T::zero() {
            for i in 0..q {
                loadings[(i, c)] = -loadings[(i, c)];
            }
        }
    }

    let scores = z.matmul(&loadings);
    let model = PcaModel {
        n_input_columns: p,
        kept_columns: kept,
        means,
        scales,
        loadings,
        component_variance,
        total_variance: T::of_usize(q),
    };
    Ok((scores, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, p: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_row_major(n, p, (0..n * p).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn dominant_direction_explains_almost_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dir = [1.0, -2.0, 0.5, 3.0];
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let t: f64 = rng.gen_range(-5.0..5.0);
                dir.iter().map(|d| d * t + 1e-4 * rng.gen_range(-1.0..1.0)).collect()
            })
            .collect();
        let (_, model) = pca_scores(&Matrix::from_rows(&rows), 2).unwrap();
        assert!(model.explained_variance_ratio()[0] > 0.99);
    }

    #[test]
    fn all_components_explain_everything() {
        let m = random(12, 5, 1);
        let (_, model) = pca_scores(&m, 5).unwrap();
        let total: f64 = model.explained_variance_ratio().iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn scores_are_centered_and_orthogonal_wide_and_tall() {
        for (n, p) in [(40, 20), (15, 60)] {
            let m = random(n, p, 7);
            let (scores, model) = pca_scores(&m, 5).unwrap();
            for a in 0..5 {
                let ca = scores.column(a);
                assert!(ca.iter().sum::<f64>().abs() / (n as f64) < 1e-10);
                for b in a + 1..5 {
                    let cb = scores.column(b);
                    let dotp: f64 = ca.iter().zip(&cb).map(|(x, y)| x * y).sum();
                    assert!(dotp.abs() < 1e-8, "{n}x{p} components {a},{b}: {dotp}");
                }
            }
            let reproj = model.project_matrix(&m).unwrap();
            for i in 0..n {
                for c in 0..5 {
                    assert!((reproj[(i, c)] - scores[(i, c)]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn constant_columns_are_dropped_and_degenerate_rejected() {
        let mut m = random(10, 4, 2);
        for i in 0..10 {
            m[(i, 1)] = 3.0;
        }
        let (_, model) = pca_scores(&m, 2).unwrap();
        assert_eq!(model.kept_columns, vec![0, 2, 3]);
        let c = Matrix::from_rows(&[[1.0, 2.0, 5.0], [1.0, 2.0, 6.0], [1.0, 2.0, 7.0]]);
        assert_eq!(pca_scores(&c, 1).unwrap_err(), PcaError::DegenerateMatrix(1));
        assert!(matches!(pca_scores(&random(4, 6, 1), 4), Err(PcaError::TooManyComponents { k: 4, max: 3 })));
    }
}
