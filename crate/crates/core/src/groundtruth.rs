//! Transformed training pairs and ground-truth patch/point correspondences.

use crate::error::{Error, Result};
use crate::geometry::{apply_transform, dist2, random_rigid, KdTree, MultiScaleCloud, PointCloud, RigidTransform, Vec3};
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_PATCH_OVERLAP_THRESHOLD: f64 = 0.1;
pub const DEFAULT_N_G: usize = 128;

/// Patch pairs `(i in P, j in Q)` with a score per pair (an overlap ratio for
/// ground truth, a correlation value for predicted matches).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PatchMatchSet {
    pub pairs: Vec<(usize, usize)>,
    pub overlaps: Vec<f64>,
}

impl PatchMatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Point correspondences inside one patch pair, as positions within each
/// patch's member list.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointMatchSet {
    pub patch_pair: (usize, usize),
    pub pairs: Vec<(usize, usize)>,
}

/// `(P, Q = T(P), T)` for a seeded random rigid motion `T`.
pub fn make_pair(
    cloud: &PointCloud,
    seed: u64,
    max_angle: f64,
    max_translation: f64,
) -> Result<(PointCloud, PointCloud, RigidTransform)> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput);
    }
    let t = random_rigid(seed, max_angle, max_translation);
    Ok((cloud.clone(), apply_transform(cloud, &t), t))
}

/// Fraction of transformed source-patch points with a target-patch point
/// within `radius`.
pub fn patch_overlap(patch_p: &[Vec3], patch_q: &[Vec3], t_gt: &RigidTransform, radius: f64) -> Result<f64> {
    if patch_p.is_empty() || patch_q.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(radius > 0.0) {
        return Err(Error::invalid("overlap radius must be positive"));
    }
    let r2 = radius * radius;
    let hits = patch_p
        .iter()
        .map(|p| t_gt.apply(p))
        .filter(|tp| patch_q.iter().any(|q| dist2(tp, q) <= r2))
        .count();
    Ok(hits as f64 / patch_p.len() as f64)
}

/// Directional overlap ratio for every patch pair, `|P̂| × |Q̂|`.
pub fn overlap_matrix(ms_p: &MultiScaleCloud, ms_q: &MultiScaleCloud, t_gt: &RigidTransform, radius: f64) -> Result<DMatrix<f64>> {
    if !(radius > 0.0) {
        return Err(Error::invalid("overlap radius must be positive"));
    }
    let tree = KdTree::new(&ms_q.fine.points);
    let mut counts = DMatrix::<f64>::zeros(ms_p.num_patches(), ms_q.num_patches());
    let mut seen: Vec<usize> = Vec::new();
    for (a, p) in ms_p.fine.points.iter().enumerate() {
        let i = ms_p.patch_of[a];
        seen.clear();
        for (b, _) in tree.within_radius(&t_gt.apply(p), radius) {
            let j = ms_q.patch_of[b];
            if !seen.contains(&j) {
                seen.push(j);
                counts[(i, j)] += 1.0;
            }
        }
    }
    for (i, members) in ms_p.fine_of.iter().enumerate() {
        let n = members.len().max(1) as f64;
        for j in 0..ms_q.num_patches() {
            counts[(i, j)] /= n;
        }
    }
    Ok(counts)
}

/// All patch pairs whose overlap exceeds `threshold`, sorted by (i, j).
pub fn gt_patch_matches(
    ms_p: &MultiScaleCloud,
    ms_q: &MultiScaleCloud,
    t_gt: &RigidTransform,
    radius: f64,
    threshold: f64,
) -> Result<PatchMatchSet> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::invalid(format!("overlap threshold must lie in [0, 1), got {threshold}")));
    }
    Ok(patch_matches_from_overlap(&overlap_matrix(ms_p, ms_q, t_gt, radius)?, threshold))
}

pub fn patch_matches_from_overlap(overlap: &DMatrix<f64>, threshold: f64) -> PatchMatchSet {
    let mut set = PatchMatchSet::default();
    for i in 0..overlap.nrows() {
        for j in 0..overlap.ncols() {
            let o = overlap[(i, j)];
            if o > threshold {
                set.pairs.push((i, j));
                set.overlaps.push(o);
            }
        }
    }
    set
}

/// Samples up to `n_g` ground-truth patch pairs (seeded, without replacement,
/// kept in set order) and lists every point pair with `|T(p) - q| < t`.
pub fn gt_point_matches(
    ms_p: &MultiScaleCloud,
    ms_q: &MultiScaleCloud,
    t_gt: &RigidTransform,
    patch_matches: &PatchMatchSet,
    n_g: usize,
    t: f64,
    seed: u64,
) -> Result<Vec<PointMatchSet>> {
    if patch_matches.is_empty() {
        return Err(Error::NoPatchMatches);
    }
    if n_g == 0 {
        return Err(Error::invalid("n_g must be at least 1"));
    }
    if !(t > 0.0) {
        return Err(Error::invalid("point match threshold must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = patch_matches.len();
    let mut chosen = sample(&mut rng, total, n_g.min(total)).into_vec();
    chosen.sort_unstable();
    let t2 = t * t;
    Ok(chosen
        .into_iter()
        .map(|c| {
            let (i, j) = patch_matches.pairs[c];
            let moved: Vec<Vec3> = ms_p.fine_of[i].iter().map(|&a| t_gt.apply(&ms_p.fine.points[a])).collect();
            let targets = ms_q.patch_points(j);
            let mut pairs = Vec::new();
            for (a, p) in moved.iter().enumerate() {
                for (b, q) in targets.iter().enumerate() {
                    if dist2(p, q) < t2 {
                        pairs.push((a, b));
                    }
                }
            }
            PointMatchSet { patch_pair: (i, j), pairs }
        })
        .collect())
}
