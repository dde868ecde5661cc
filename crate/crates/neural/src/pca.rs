//! Principal component analysis via the symmetric eigendecomposition of the
//! sample covariance.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{NeuralError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k x d`, orthonormal rows ordered by decreasing variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl Pca {
    pub fn fit(rows: &[Vec<f64>], k: usize) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if n < 2 {
            return Err(NeuralError::Invalid("pca needs at least 2 rows".into()));
        }
        if rows.iter().any(|r| r.len() != d) {
            return Err(NeuralError::Invalid("pca rows have unequal width".into()));
        }
        if k == 0 || k > n.min(d) {
            return Err(NeuralError::Invalid(format!(
                "pca components {k} must be in 1..={}",
                n.min(d)
            )));
        }
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        let mut components = Vec::with_capacity(k);
        let mut explained_variance = Vec::with_capacity(k);
        for &idx in order.iter().take(k) {
            let mut comp: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
            // Sign convention: largest-magnitude coordinate is positive.
            let pivot = comp
                .iter()
                .copied()
                .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                comp.iter_mut().for_each(|x| *x = -*x);
            }
            components.push(comp);
            explained_variance.push(eig.eigenvalues[idx].max(0.0));
        }
        let explained_variance_ratio = explained_variance
            .iter()
            .map(|v| if total > 0.0 { v / total } else { 0.0 })
            .collect();
        Ok(Self {
            mean,
            components,
            explained_variance,
            explained_variance_ratio,
        })
    }

    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(row)
                    .zip(&self.mean)
                    .map(|((ci, x), m)| ci * (x - m))
                    .sum()
            })
            .collect()
    }

    /// Maps projected coordinates back to (uncentered) input space.
    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter().zip(coords) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += w * ci;
            }
        }
        out
    }
}

/// Fits `k` components and returns `(projections, components)`.
pub fn pca_project(rows: &[Vec<f64>], k: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let pca = Pca::fit(rows, k)?;
    let proj = rows.iter().map(|r| pca.project(r)).collect();
    Ok((proj, pca.components))
}
