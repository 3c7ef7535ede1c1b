//! ROC curves and AUROC at object and point level.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Scores with binary labels (1 = anomalous).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let set = ScoredSet { scores, labels };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scores.len() != self.labels.len() {
            return Err(Error::DimMismatch { expected: self.scores.len(), got: self.labels.len() });
        }
        if self.labels.iter().any(|&l| l > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        if self.scores.iter().any(|s| s.is_nan()) {
            return Err(Error::NonFinite("scores"));
        }
        Ok(())
    }

    pub fn extend(&mut self, scores: &[f64], labels: &[u8]) {
        self.scores.extend_from_slice(scores);
        self.labels.extend_from_slice(labels);
    }

    fn class_counts(&self) -> Result<(usize, usize)> {
        self.validate()?;
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        let neg = self.labels.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::DegenerateLabels);
        }
        Ok((pos, neg))
    }

    /// Indices sorted by score ascending, with the extent of each tie group.
    fn tie_groups(&self, descending: bool) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| {
            let o = self.scores[a].total_cmp(&self.scores[b]);
            if descending {
                o.reverse()
            } else {
                o
            }
        });
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in order {
            match groups.last_mut() {
                // -0.0 and 0.0 tie
                Some(g) if self.scores[g[0]] == self.scores[i] => g.push(i),
                _ => groups.push(vec![i]),
            }
        }
        groups
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (Mann-Whitney U over average ranks).
pub fn auroc(set: &ScoredSet) -> Result<f64> {
    let (pos, neg) = set.class_counts()?;
    let mut rank_sum = 0.0;
    let mut next_rank = 1.0;
    for group in set.tie_groups(false) {
        let len = group.len() as f64;
        let avg = next_rank + (len - 1.0) / 2.0;
        let positives = group.iter().filter(|&&i| set.labels[i] == 1).count() as f64;
        rank_sum += avg * positives;
        next_rank += len;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUROC over one score per object.
pub fn o_auroc(objects: &[(f64, u8)]) -> Result<f64> {
    auroc(&ScoredSet::new(objects.iter().map(|o| o.0).collect(), objects.iter().map(|o| o.1).collect())?)
}

/// AUROC over per-point scores pooled across samples.
pub fn p_auroc(points: &ScoredSet) -> Result<f64> {
    auroc(points)
}

/// ROC points `(fpr, tpr)` from (0, 0) to (1, 1), one per distinct threshold in
/// descending order.
pub fn roc_curve(set: &ScoredSet) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = set.class_counts()?;
    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for group in set.tie_groups(true) {
        for i in group {
            if set.labels[i] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        curve.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(curve)
}

/// Trapezoidal area under a curve of `(x, y)` points.
pub fn trapezoid_area(curve: &[(f64, f64)]) -> f64 {
    curve.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}
