//! Test-time anomaly scoring against a memory bank.

use crate::descriptor::FeaturedCloud;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::geometry::{apply_transform, KdTree, PointCloud, RigidTransform, Vec3};
use crate::memorybank::{fuse, nn_distance, MemoryBank};
use crate::registration::{register, RegisterConfig, RegistrationReport};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnomalyConfig {
    /// Neighborhood size of the centroid filter.
    pub filter_k: usize,
    /// Neighborhood size of the mean filter.
    pub smooth_n: usize,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig { filter_k: 8, smooth_n: 9 }
    }
}

/// Keeps point i when it is the member of its k-neighborhood (itself
/// included) closest to that neighborhood's centroid.
pub fn filter_mask(fine: &PointCloud, k: usize) -> Result<Vec<bool>> {
    if k < 2 {
        return Err(Error::invalid("filter k must be at least 2"));
    }
    if k > fine.len() {
        return Err(Error::TooFewPoints { k, size: fine.len() });
    }
    let tree = KdTree::new(&fine.points);
    let mut mask = Vec::with_capacity(fine.len());
    for p in &fine.points {
        let nb = tree.knn(p, k)?;
        let mut mu = Vec3::zeros();
        for &j in &nb.indices {
            mu += fine.points[j];
        }
        mu /= k as f64;
        let min = nb.indices.iter().map(|&j| (fine.points[j] - mu).norm()).fold(f64::INFINITY, f64::min);
        mask.push((p - mu).norm() <= min + 1e-12);
    }
    Ok(mask)
}

/// Distance of every fused row to its nearest bank entry.
pub fn point_scores(rows: &FeatureMatrix, bank: &MemoryBank) -> Result<Vec<f64>> {
    if rows.dim != bank.fused_dim() {
        return Err(Error::DimMismatch { expected: bank.fused_dim(), got: rows.dim });
    }
    rows.iter_rows().map(|r| nn_distance(bank, r)).collect()
}

/// Full fine-level scores: filtered points keep theirs (given in point order),
/// the rest copy their nearest filtered point.
pub fn propagate_scores(fine: &PointCloud, mask: &[bool], filtered_scores: &[f64]) -> Result<Vec<f64>> {
    if mask.len() != fine.len() {
        return Err(Error::SizeMismatch { features: mask.len(), points: fine.len() });
    }
    let kept: Vec<usize> = (0..fine.len()).filter(|&i| mask[i]).collect();
    if kept.is_empty() {
        return Err(Error::invalid("no points passed the filter"));
    }
    if kept.len() != filtered_scores.len() {
        return Err(Error::SizeMismatch { features: filtered_scores.len(), points: kept.len() });
    }
    let tree = KdTree::new(&kept.iter().map(|&i| fine.points[i]).collect::<Vec<_>>());
    let mut out = vec![0.0; fine.len()];
    let mut next = 0;
    for (i, p) in fine.points.iter().enumerate() {
        out[i] = if mask[i] {
            next += 1;
            filtered_scores[next - 1]
        } else {
            filtered_scores[tree.nearest(p).expect("non-empty tree")]
        };
    }
    Ok(out)
}

/// Mean of the scores over each point's n nearest neighbors (itself included).
pub fn smooth_scores(fine: &PointCloud, scores: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("smoothing size must be positive"));
    }
    if n > fine.len() {
        return Err(Error::TooFewPoints { k: n, size: fine.len() });
    }
    if scores.len() != fine.len() {
        return Err(Error::SizeMismatch { features: scores.len(), points: fine.len() });
    }
    let tree = KdTree::new(&fine.points);
    fine.points
        .iter()
        .map(|p| Ok(tree.knn(p, n)?.indices.iter().map(|&j| scores[j]).sum::<f64>() / n as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyResult {
    /// Smoothed scores, one per fine point of the test sample.
    pub point_scores: Vec<f64>,
    pub object_score: f64,
    pub filter_mask: Vec<bool>,
    /// Motion aligning the test sample with the template.
    pub transform_used: RigidTransform,
    pub registration: RegistrationReport,
}

/// Registers the test sample to the template, fuses its features with the
/// aligned coordinates, and scores it against the bank.
pub fn detect(
    test: &FeaturedCloud,
    template: &FeaturedCloud,
    bank: &MemoryBank,
    cfg: &AnomalyConfig,
    reg: &RegisterConfig,
) -> Result<AnomalyResult> {
    if test.local.dim != bank.feature_dim() {
        return Err(Error::DimMismatch { expected: bank.feature_dim(), got: test.local.dim });
    }
    let report = register(test, template, reg)?;
    score_aligned(test, report, bank, cfg)
}

/// Scoring once the aligning transform is known.
pub fn score_aligned(test: &FeaturedCloud, report: RegistrationReport, bank: &MemoryBank, cfg: &AnomalyConfig) -> Result<AnomalyResult> {
    let fine = &test.ms.fine;
    let aligned = apply_transform(fine, &report.transform);
    let mask = filter_mask(fine, cfg.filter_k.min(fine.len()))?;
    let kept: Vec<usize> = (0..fine.len()).filter(|&i| mask[i]).collect();
    let coords: Vec<Vec3> = kept.iter().map(|&i| aligned.points[i]).collect();
    let rows = fuse(&test.local.select(&kept), &coords, &bank.params)?;
    let filtered = point_scores(&rows, bank)?;
    let full = propagate_scores(fine, &mask, &filtered)?;
    let smoothed = smooth_scores(fine, &full, cfg.smooth_n.min(fine.len()))?;
    let object_score = smoothed.iter().copied().fold(0.0, f64::max);
    Ok(AnomalyResult { point_scores: smoothed, object_score, filter_mask: mask, transform_used: report.transform, registration: report })
}

/// Scores for arbitrary points taken from their nearest scored fine point.
pub fn scores_at(points: &[Vec3], fine: &PointCloud, scores: &[f64]) -> Result<Vec<f64>> {
    if scores.len() != fine.len() {
        return Err(Error::SizeMismatch { features: scores.len(), points: fine.len() });
    }
    let tree = KdTree::new(&fine.points);
    points.iter().map(|p| tree.nearest(p).map(|i| scores[i]).ok_or(Error::EmptyInput)).collect()
}
