//! Perceptual distance, diversity, PCA and rank correlation.

mod pca;
mod proxy;
mod spearman;

pub use pca::Pca;
pub use proxy::ProxyDistance;
pub use spearman::{
    mid_ranks, permutation_distribution, spearman, CorrelationMethod, CorrelationReport,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A distance between images where smaller means more similar.
pub trait PerceptualMetric: Send + Sync {
    fn name(&self) -> &str;
    fn distance(&self, x: &Tensor, y: &Tensor) -> Result<f64>;
}

/// Mean distance over all unordered pairs.
pub fn diversity_score(images: &[Tensor], metric: &dyn PerceptualMetric) -> Result<f64> {
    if images.len() < 2 {
        return Err(Error::Argument(format!(
            "diversity needs at least 2 images, got {}",
            images.len()
        )));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            sum += metric.distance(&images[i], &images[j])?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Looks up a bundled metric by name.
pub fn metric_by_name(name: &str) -> Result<Box<dyn PerceptualMetric>> {
    match name {
        ProxyDistance::NAME => Ok(Box::new(ProxyDistance::default())),
        other => Err(Error::Argument(format!("unknown metric {other:?}"))),
    }
}
