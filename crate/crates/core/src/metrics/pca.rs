use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fitted PCA transform.
///
/// Points are centered per feature and then divided by one global scale (the
/// standard deviation of all centered entries), so new points can be mapped
/// with exactly the normalization used for fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    pub scale: f64,
    /// `k` rows of length `dim`, unit norm, ordered by explained variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    /// Variance of the normalized data summed over all features.
    pub total_variance: f64,
}

impl Pca {
    pub fn fit(points: &[Vec<f64>], k: usize) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::Argument(format!(
                "PCA needs at least 2 points, got {n}"
            )));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Argument("PCA points have differing lengths".into()));
        }
        if k == 0 || k > n.min(dim) {
            return Err(Error::Argument(format!(
                "component count {k} must be in 1..={}",
                n.min(dim)
            )));
        }
        let mut mean = vec![0.0; dim];
        for p in points {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut x = DMatrix::<f64>::from_fn(n, dim, |i, j| points[i][j] - mean[j]);
        let scale = (x.iter().map(|v| v * v).sum::<f64>() / (n * dim) as f64).sqrt();
        if scale == 0.0 {
            return Err(Error::Degenerate("all PCA points are identical".into()));
        }
        x /= scale;
        let total_variance = x.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;

        let svd = x.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Degenerate("SVD did not converge".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let mut components = Vec::with_capacity(k);
        let mut explained_variance = Vec::with_capacity(k);
        for &i in order.iter().take(k) {
            let mut row: Vec<f64> = v_t.row(i).iter().copied().collect();
            // fix the sign: largest-magnitude coordinate positive
            let pivot = row
                .iter()
                .copied()
                .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            if pivot < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
            }
            components.push(row);
            explained_variance.push(svd.singular_values[i].powi(2) / (n - 1) as f64);
        }
        Ok(Self {
            mean,
            scale,
            components,
            explained_variance,
            total_variance,
        })
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| v / self.total_variance)
            .collect()
    }

    pub fn transform_one(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.mean.len() {
            return Err(Error::Shape {
                expected: vec![self.mean.len()],
                actual: vec![point.len()],
            });
        }
        Ok(self
            .components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(point.iter().zip(&self.mean))
                    .map(|(w, (v, m))| w * (v - m) / self.scale)
                    .sum()
            })
            .collect())
    }

    pub fn transform(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        points.iter().map(|p| self.transform_one(p)).collect()
    }

    /// Fits and projects the fitting points; returns `(projections, explained_variance)`.
    pub fn fit_project(points: &[Vec<f64>], k: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>, Pca)> {
        let pca = Self::fit(points, k)?;
        let proj = pca.transform(points)?;
        Ok((proj, pca.explained_variance.clone(), pca))
    }
}
