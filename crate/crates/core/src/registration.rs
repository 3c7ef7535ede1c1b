//! Rigid alignment from pooled point matches: Kabsch fits inside a seeded
//! RANSAC loop, plus the full patch-to-point matching front end.

use crate::descriptor::FeaturedCloud;
use crate::error::{Error, Result};
use crate::geometry::{dist2, norm, RigidTransform, Vec3};
use crate::matching::{augment_dustbin, cost_matrix, dual_normalize, gaussian_correlation, mutual_topk_point_matches, sinkhorn, topk_patch_matches};
use nalgebra::Matrix3;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::hash_map::{Entry, HashMap};

/// Paired source/destination points with optional confidences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub src: Vec<Vec3>,
    pub dst: Vec<Vec3>,
    pub weight: Option<Vec<f64>>,
}

impl CorrespondenceSet {
    pub fn new(src: Vec<Vec3>, dst: Vec<Vec3>) -> Result<Self> {
        let c = CorrespondenceSet { src, dst, weight: None };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.src.len() != self.dst.len() {
            return Err(Error::DimMismatch { expected: self.src.len(), got: self.dst.len() });
        }
        if let Some(w) = &self.weight {
            if w.len() != self.src.len() {
                return Err(Error::DimMismatch { expected: self.src.len(), got: w.len() });
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid("correspondence weights must be finite and non-negative"));
            }
        }
        if self.src.iter().chain(&self.dst).any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("correspondences"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> CorrespondenceSet {
        CorrespondenceSet {
            src: idx.iter().map(|&i| self.src[i]).collect(),
            dst: idx.iter().map(|&i| self.dst[i]).collect(),
            weight: self.weight.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    #[serde(skip)]
    pub transform: RigidTransform,
    pub inliers: usize,
    pub inlier_ratio: f64,
    pub correspondences: usize,
    pub rre_deg: Option<f64>,
    pub rte: Option<f64>,
}

impl RegistrationReport {
    /// Report for a cloud aligned to itself.
    pub fn identity(points: usize) -> Self {
        RegistrationReport {
            transform: RigidTransform::identity(),
            inliers: points,
            inlier_ratio: 1.0,
            correspondences: points,
            rre_deg: None,
            rte: None,
        }
    }

    pub fn with_ground_truth(mut self, t_gt: &RigidTransform) -> Self {
        let (rre, rte) = registration_error(&self.transform, t_gt);
        self.rre_deg = Some(rre);
        self.rte = Some(rte);
        self
    }
}

/// Weighted least-squares rigid fit minimizing `sum w |R src + t - dst|^2`.
pub fn kabsch(corr: &CorrespondenceSet) -> Result<RigidTransform> {
    if corr.len() < 3 {
        return Err(Error::Degenerate("rigid fit needs at least 3 correspondences"));
    }
    let w = |i: usize| corr.weight.as_ref().map_or(1.0, |w| w[i]);
    let total: f64 = (0..corr.len()).map(w).sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("correspondence weights sum to zero"));
    }
    let mut cs = Vec3::zeros();
    let mut cd = Vec3::zeros();
    for i in 0..corr.len() {
        cs += corr.src[i] * w(i);
        cd += corr.dst[i] * w(i);
    }
    cs /= total;
    cd /= total;
    let mut h = Matrix3::zeros();
    for i in 0..corr.len() {
        h += (corr.src[i] - cs) * (corr.dst[i] - cd).transpose() * w(i);
    }
    // singular values come sorted descending
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv = svd.singular_values;
    if sv[0] == 0.0 || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::Degenerate("collinear or coincident correspondences"));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Ok(RigidTransform { rotation, translation: cd - rotation * cs })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacConfig {
    pub max_iters: usize,
    /// Residual below which a correspondence counts as inlier; `None` uses
    /// `thresh_voxels` fine voxels inside [`register`].
    pub inlier_thresh: Option<f64>,
    pub thresh_voxels: f64,
    /// Early exit once this probability of having drawn an all-inlier sample
    /// is reached; 1.0 disables early exit.
    pub confidence: f64,
    /// Minimal samples whose pairwise source/destination edge lengths differ
    /// by more than this ratio are rejected before fitting; 0 disables.
    pub edge_ratio: f64,
    pub scoring: Scoring,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            max_iters: 50_000,
            inlier_thresh: None,
            thresh_voxels: 1.5,
            confidence: 0.9999,
            edge_ratio: 0.9,
            scoring: Scoring::Truncated,
        }
    }
}

/// How competing hypotheses are ranked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scoring {
    /// More inliers wins.
    InlierCount,
    /// Lower sum of squared residuals truncated at the threshold wins, which
    /// separates hypotheses with similar counts by how tight their inliers are.
    #[default]
    Truncated,
}

impl std::str::FromStr for Scoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(Scoring::InlierCount),
            "truncated" => Ok(Scoring::Truncated),
            other => Err(Error::invalid(format!("unknown scoring {other:?} (count, truncated)"))),
        }
    }
}

impl Scoring {
    pub fn name(self) -> &'static str {
        match self {
            Scoring::InlierCount => "count",
            Scoring::Truncated => "truncated",
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Score {
    inliers: usize,
    cost: f64,
}

impl Score {
    fn beats(&self, other: &Score, scoring: Scoring) -> bool {
        match scoring {
            Scoring::InlierCount => self.inliers > other.inliers,
            Scoring::Truncated => self.cost < other.cost,
        }
    }
}

fn score(corr: &CorrespondenceSet, t: &RigidTransform, thresh2: f64) -> Score {
    let mut s = Score { inliers: 0, cost: 0.0 };
    for (src, dst) in corr.src.iter().zip(&corr.dst) {
        let r2 = dist2(&t.apply(src), dst);
        if r2 < thresh2 {
            s.inliers += 1;
            s.cost += r2;
        } else {
            s.cost += thresh2;
        }
    }
    s
}

fn inlier_indices(corr: &CorrespondenceSet, t: &RigidTransform, thresh2: f64) -> Vec<usize> {
    (0..corr.len()).filter(|&i| dist2(&t.apply(&corr.src[i]), &corr.dst[i]) < thresh2).collect()
}

fn edges_consistent(corr: &CorrespondenceSet, idx: &[usize; 3], ratio: f64) -> bool {
    if ratio <= 0.0 {
        return true;
    }
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let ds = norm(&(corr.src[idx[a]] - corr.src[idx[b]]));
        let dd = norm(&(corr.dst[idx[a]] - corr.dst[idx[b]]));
        if ds < dd * ratio || dd < ds * ratio {
            return false;
        }
    }
    true
}

const REFIT_ROUNDS: usize = 20;
const POLISH_FRACTIONS: [f64; 5] = [0.5, 0.25, 0.1, 0.03, 0.01];

/// Seeded RANSAC over minimal 3-point samples, with repeated Kabsch refits on
/// the best hypothesis' inliers followed by refits at shrinking thresholds. Samples are drawn proportionally to the
/// correspondence weights when present.
pub fn ransac_transform(corr: &CorrespondenceSet, cfg: &RansacConfig, inlier_thresh: f64, seed: u64) -> Result<RegistrationReport> {
    corr.validate()?;
    if corr.len() < 3 {
        return Err(Error::RegistrationFailed(format!("only {} correspondences", corr.len())));
    }
    if !(inlier_thresh > 0.0) {
        return Err(Error::invalid("inlier threshold must be positive"));
    }
    let thresh2 = inlier_thresh * inlier_thresh;
    let n = corr.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weighted = match &corr.weight {
        Some(w) => Some(WeightedIndex::new(w).map_err(|e| Error::invalid(format!("correspondence weights: {e}")))?),
        None => None,
    };
    let draw = |rng: &mut ChaCha8Rng| -> usize {
        match &weighted {
            Some(dist) => dist.sample(rng),
            None => rng.gen_range(0..n),
        }
    };

    let mut best: Option<(Score, RigidTransform)> = None;
    let mut needed = cfg.max_iters;
    let mut it = 0;
    while it < needed.min(cfg.max_iters) {
        it += 1;
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let c = draw(&mut rng);
        if a == b || a == c || b == c {
            continue;
        }
        let idx = [a, b, c];
        if !edges_consistent(corr, &idx, cfg.edge_ratio) {
            continue;
        }
        let Ok(t) = kabsch(&corr.subset(&idx).unweighted()) else {
            continue;
        };
        let sc = score(corr, &t, thresh2);
        if best.as_ref().map_or(true, |(bs, _)| sc.beats(bs, cfg.scoring)) {
            best = Some((sc, t));
            if cfg.confidence < 1.0 {
                let w = sc.inliers as f64 / n as f64;
                let p_good = w * w * w;
                if p_good >= 1.0 {
                    needed = it;
                } else if p_good > 0.0 {
                    let k = ((1.0 - cfg.confidence).ln() / (1.0 - p_good).ln()).ceil();
                    needed = if k.is_finite() { k as usize } else { cfg.max_iters };
                }
            }
        }
    }
    let Some((mut best_score, mut transform)) = best.filter(|(s, _)| s.inliers >= 3) else {
        return Err(Error::RegistrationFailed("no hypothesis with at least 3 inliers".into()));
    };
    // refit on the inlier set while that does not make the score worse
    for _ in 0..REFIT_ROUNDS {
        let idx = inlier_indices(corr, &transform, thresh2);
        let Ok(refined) = kabsch(&corr.subset(&idx).unweighted()) else { break };
        let sc = score(corr, &refined, thresh2);
        if best_score.beats(&sc, cfg.scoring) {
            break;
        }
        let stable = inlier_indices(corr, &refined, thresh2) == idx;
        transform = refined;
        best_score = sc;
        if stable {
            break;
        }
    }
    // coarse-to-fine: refit on progressively tighter residual subsets, judging
    // each candidate at the tightened threshold
    let mut inliers = best_score.inliers;
    for frac in POLISH_FRACTIONS {
        let t2 = thresh2 * frac * frac;
        let tight = inlier_indices(corr, &transform, t2);
        if tight.len() < 3 || tight.len() * 10 < inliers {
            break;
        }
        let Ok(refined) = kabsch(&corr.subset(&tight).unweighted()) else { break };
        if score(corr, &transform, t2).beats(&score(corr, &refined, t2), cfg.scoring) {
            break;
        }
        let sc = score(corr, &refined, thresh2);
        transform = refined;
        inliers = sc.inliers;
    }
    Ok(RegistrationReport {
        transform,
        inliers,
        inlier_ratio: inliers as f64 / n as f64,
        correspondences: n,
        rre_deg: None,
        rte: None,
    })
}

impl CorrespondenceSet {
    fn unweighted(mut self) -> Self {
        self.weight = None;
        self
    }
}

/// Rotation error in degrees and translation error.
pub fn registration_error(t: &RigidTransform, t_gt: &RigidTransform) -> (f64, f64) {
    let cos = ((t.rotation.transpose() * t_gt.rotation).trace() - 1.0) / 2.0;
    let rre = cos.clamp(-1.0, 1.0).acos().to_degrees();
    let rte = (t.translation - t_gt.translation).norm();
    (rre, rte)
}

/// Settings for the patch and point matching stages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchingConfig {
    pub n_c: usize,
    pub k: usize,
    pub sinkhorn_iters: usize,
    pub alpha: f64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig { n_c: 256, k: 3, sinkhorn_iters: 100, alpha: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RegisterConfig {
    pub matching: MatchingConfig,
    pub ransac: RansacConfig,
    pub seed: u64,
}

/// Pools mutual top-k point matches over the selected patch pairs. Duplicate
/// (source, target) pairs are kept once with their highest confidence.
pub fn collect_correspondences(p: &FeaturedCloud, q: &FeaturedCloud, cfg: &MatchingConfig) -> Result<CorrespondenceSet> {
    let h = gaussian_correlation(&p.patch, &q.patch)?;
    let h_bar = dual_normalize(&h);
    let patches = topk_patch_matches(&h_bar, cfg.n_c)?;
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    let mut corr = CorrespondenceSet::default();
    let mut weights = Vec::new();
    for (&(i, j), &score) in patches.pairs.iter().zip(&patches.overlaps) {
        let members_p = &p.ms.fine_of[i];
        let members_q = &q.ms.fine_of[j];
        let fi = p.point.select(members_p);
        let fj = q.point.select(members_q);
        let scores = augment_dustbin(&cost_matrix(&fi, &fj)?, cfg.alpha);
        let z = sinkhorn(&scores, cfg.sinkhorn_iters)?;
        for (a, b) in mutual_topk_point_matches(&z, cfg.k)? {
            let key = (members_p[a], members_q[b]);
            let w = score * z.prob(a, b);
            match seen.entry(key) {
                Entry::Occupied(e) => {
                    let slot = &mut weights[*e.get()];
                    *slot = f64::max(*slot, w);
                }
                Entry::Vacant(e) => {
                    e.insert(weights.len());
                    corr.src.push(p.ms.fine.points[key.0]);
                    corr.dst.push(q.ms.fine.points[key.1]);
                    weights.push(w);
                }
            }
        }
    }
    corr.weight = Some(weights);
    Ok(corr)
}

/// Estimates the motion taking `p` onto `q`.
pub fn register(p: &FeaturedCloud, q: &FeaturedCloud, cfg: &RegisterConfig) -> Result<RegistrationReport> {
    let corr = collect_correspondences(p, q, &cfg.matching)?;
    if corr.is_empty() {
        return Err(Error::RegistrationFailed("no point correspondences".into()));
    }
    let thresh = cfg.ransac.inlier_thresh.unwrap_or(cfg.ransac.thresh_voxels * p.ms.fine_voxel.max(q.ms.fine_voxel));
    ransac_transform(&corr, &cfg.ransac, thresh, cfg.seed)
}
