//! Rotation-invariant local descriptors.
//!
//! The built-in descriptor is a fast point feature histogram: for every
//! point and each of its neighbors the three Darboux-frame angles between the
//! two oriented normals are binned into a simplified histogram, and each
//! point's final histogram adds its neighbors' simplified histograms weighted
//! by inverse distance. Every quantity is computed from distances, dot
//! products and cross products, so the output does not depend on the pose of
//! the cloud.
//!
//! Arithmetic is arranged so that for the 24 rotations that permute and
//! negate coordinate axes the features are bitwise identical: distances and
//! dot products use a canonical summation order, and the covariance
//! eigenproblem behind each normal is solved in a canonical axis frame.

use crate::error::{Error, Result};
use crate::features::{FeatureLevel, FeatureMatrix};
use crate::geometry::{dot, norm, KdTree, MultiScaleCloud, PointCloud, Vec3};
use nalgebra::{Matrix3, SymmetricEigen};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescriptorConfig {
    pub neighbor_k: usize,
    pub angle_bins: usize,
    pub normal_k: usize,
    /// Point features are the local rows rescaled to L2 norm `sqrt(dim * point_scale)`,
    /// so the point cost matrix holds `point_scale` times cosine similarity.
    /// Zero keeps the local rows unchanged.
    pub point_scale: f64,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig { neighbor_k: 32, angle_bins: 11, normal_k: 16, point_scale: 30.0 }
    }
}

impl DescriptorConfig {
    pub fn dim(&self) -> usize {
        3 * self.angle_bins
    }

    pub fn validate(&self) -> Result<()> {
        if self.neighbor_k == 0 || self.angle_bins == 0 || self.normal_k < 3 {
            return Err(Error::invalid("descriptor config needs neighbor_k, angle_bins >= 1 and normal_k >= 3"));
        }
        if !(self.point_scale >= 0.0 && self.point_scale.is_finite()) {
            return Err(Error::invalid("point_scale must be finite and non-negative"));
        }
        Ok(())
    }
}

/// All 48 signed axis permutations as (axis map, signs).
fn signed_permutations() -> impl Iterator<Item = ([usize; 3], [f64; 3])> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    PERMS.into_iter().flat_map(|p| {
        (0..8).map(move |bits| {
            let s = |b: usize| if bits >> b & 1 == 1 { -1.0 } else { 1.0 };
            (p, [s(0), s(1), s(2)])
        })
    })
}

/// Eigenvector of the smallest eigenvalue of a symmetric 3×3 matrix.
///
/// The matrix is first brought into a canonical frame (the lexicographically
/// smallest of its signed axis permutations) so that the result is exactly
/// equivariant under those permutations.
fn smallest_eigenvector(c: &Matrix3<f64>) -> Vec3 {
    let mut best: Option<([f64; 6], [usize; 3], [f64; 3])> = None;
    for (perm, signs) in signed_permutations() {
        // M_ij = s_i s_j C[perm_i][perm_j]; +0.0 folds negative zeros
        let m = |i: usize, j: usize| signs[i] * signs[j] * c[(perm[i], perm[j])] + 0.0;
        let key = [m(0, 0), m(1, 1), m(2, 2), m(0, 1), m(0, 2), m(1, 2)];
        let better = match &best {
            None => true,
            Some((bk, _, _)) => key.iter().zip(bk).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne())
                == Some(std::cmp::Ordering::Less),
        };
        if better {
            best = Some((key, perm, signs));
        }
    }
    let (key, perm, signs) = best.expect("48 candidates");
    let m = Matrix3::new(key[0], key[3], key[4], key[3], key[1], key[5], key[4], key[5], key[2]);
    let eig = SymmetricEigen::new(m);
    let mut imin = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
    }
    let e = eig.eigenvectors.column(imin);
    let mut v = Vec3::zeros();
    for i in 0..3 {
        v[perm[i]] = signs[i] * e[i];
    }
    v
}

/// Unit normals from local covariance, oriented away from the cloud centroid.
pub fn estimate_normals(cloud: &PointCloud, normal_k: usize) -> Result<Vec<Vec3>> {
    let tree = KdTree::new(&cloud.points);
    estimate_normals_with(cloud, &tree, normal_k)
}

fn estimate_normals_with(cloud: &PointCloud, tree: &KdTree, normal_k: usize) -> Result<Vec<Vec3>> {
    if normal_k < 3 {
        return Err(Error::invalid("normal_k must be at least 3"));
    }
    if cloud.len() < normal_k {
        return Err(Error::TooFewPoints { k: normal_k, size: cloud.len() });
    }
    let center = cloud.centroid();
    let mut normals = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let nb = tree.knn(p, normal_k)?;
        let mut mean = Vec3::zeros();
        for &j in &nb.indices {
            mean += cloud.points[j];
        }
        mean /= normal_k as f64;
        let mut cov = Matrix3::zeros();
        for &j in &nb.indices {
            let d = cloud.points[j] - mean;
            for a in 0..3 {
                for b in a..3 {
                    cov[(a, b)] += d[a] * d[b];
                }
            }
        }
        for a in 0..3 {
            for b in 0..a {
                cov[(a, b)] = cov[(b, a)];
            }
        }
        let mut n = smallest_eigenvector(&(cov / normal_k as f64));
        let n_len = norm(&n);
        if n_len > 0.0 {
            n /= n_len;
        }
        let side = dot(&n, &(p - center));
        let flip = if side != 0.0 {
            side < 0.0
        } else {
            // tie: first non-zero component positive
            n.iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0)
        };
        if flip {
            n = -n;
        }
        normals.push(n);
    }
    Ok(normals)
}

#[inline]
fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    Vec3::new(a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x)
}

const SOURCE_TIE_EPS: f64 = 1e-9;

/// Darboux-frame angles (alpha, phi, theta) for an oriented point pair, or
/// `None` when the pair is degenerate.
///
/// The source is the point whose normal makes the smaller angle with the
/// connecting line. alpha and phi lie in [-1, 1], theta in [-pi, pi].
pub fn pair_features(p1: &Vec3, n1: &Vec3, p2: &Vec3, n2: &Vec3) -> Option<(f64, f64, f64)> {
    let mut d = p2 - p1;
    let len = norm(&d);
    if len == 0.0 {
        return None;
    }
    d /= len;
    let a1 = dot(n1, &d);
    let a2 = dot(n2, &d);
    // near-ties keep p1 as source so rounding noise cannot flip the sign of phi
    let (u, nt, phi) = if a1.abs() + SOURCE_TIE_EPS < a2.abs() {
        d = -d;
        (n2, n1, -a2)
    } else {
        (n1, n2, a1)
    };
    let mut v = cross(&d, u);
    let v_len = norm(&v);
    if v_len == 0.0 {
        return None;
    }
    v /= v_len;
    let w = cross(u, &v);
    let alpha = dot(&v, nt);
    let theta = dot(&w, nt).atan2(dot(u, nt));
    Some((alpha, phi, theta))
}

#[inline]
fn bin(value: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((value - lo) / (hi - lo) * bins as f64).floor();
    if t <= 0.0 {
        0
    } else {
        (t as usize).min(bins - 1)
    }
}

/// Per-point local features (level `Local`), each row summing to one.
pub fn compute_local_features(cloud: &PointCloud, cfg: &DescriptorConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    if cloud.len() <= cfg.neighbor_k {
        return Err(Error::TooFewPoints { k: cfg.neighbor_k + 1, size: cloud.len() });
    }
    let tree = KdTree::new(&cloud.points);
    let normals = estimate_normals_with(cloud, &tree, cfg.normal_k.min(cloud.len()))?;
    let n = cloud.len();
    let k = cfg.neighbor_k;
    let bins = cfg.angle_bins;
    let dim = cfg.dim();

    let mut neighbors: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for (i, p) in cloud.points.iter().enumerate() {
        let nb = tree.knn(p, k + 1)?;
        let mut list: Vec<(usize, f64)> = nb.indices.into_iter().zip(nb.distances).filter(|&(j, _)| j != i).collect();
        list.truncate(k);
        neighbors.push(list);
    }

    let mut spfh = vec![0.0; n * dim];
    for i in 0..n {
        let row = &mut spfh[i * dim..(i + 1) * dim];
        let (p, np) = (&cloud.points[i], &normals[i]);
        let inc = 1.0 / k as f64;
        for &(j, _) in &neighbors[i] {
            if let Some((alpha, phi, theta)) = pair_features(p, np, &cloud.points[j], &normals[j]) {
                row[bin(alpha, -1.0, 1.0, bins)] += inc;
                row[bins + bin(phi, -1.0, 1.0, bins)] += inc;
                row[2 * bins + bin(theta, -PI, PI, bins)] += inc;
            }
        }
    }

    let mut data = vec![0.0; n * dim];
    for i in 0..n {
        let out = &mut data[i * dim..(i + 1) * dim];
        out.copy_from_slice(&spfh[i * dim..(i + 1) * dim]);
        for &(j, dist) in &neighbors[i] {
            if dist == 0.0 {
                continue;
            }
            let w = 1.0 / (k as f64 * dist);
            for (o, s) in out.iter_mut().zip(&spfh[j * dim..(j + 1) * dim]) {
                *o += w * s;
            }
        }
        let total: f64 = out.iter().sum();
        if total > 0.0 {
            out.iter_mut().for_each(|v| *v /= total);
        } else {
            out.iter_mut().for_each(|v| *v = 1.0 / dim as f64);
        }
    }
    FeatureMatrix::new(n, dim, data, FeatureLevel::Local)
}

/// Mean of each patch's local rows, L2-normalized (level `Patch`).
pub fn patch_features(local: &FeatureMatrix, ms: &MultiScaleCloud) -> Result<FeatureMatrix> {
    if local.rows != ms.fine.len() {
        return Err(Error::SizeMismatch { features: local.rows, points: ms.fine.len() });
    }
    let dim = local.dim;
    let mut out = FeatureMatrix::zeros(ms.num_patches(), dim, FeatureLevel::Patch);
    for (j, members) in ms.fine_of.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::Degenerate("empty patch"));
        }
        let row = out.row_mut(j);
        for &i in members {
            for (o, v) in row.iter_mut().zip(local.row(i)) {
                *o += v;
            }
        }
        let inv = 1.0 / members.len() as f64;
        row.iter_mut().for_each(|v| *v *= inv);
        let len = norm_slice(row);
        if len > 0.0 {
            row.iter_mut().for_each(|v| *v /= len);
        }
    }
    Ok(out)
}

/// Local rows rescaled to L2 norm `sqrt(dim * scale)` (level `Point`).
pub fn scaled_point_features(local: &FeatureMatrix, scale: f64) -> FeatureMatrix {
    let mut out = local.clone().with_level(FeatureLevel::Point);
    let target = (local.dim as f64 * scale).sqrt();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let len = norm_slice(row);
        if len > 0.0 {
            row.iter_mut().for_each(|v| *v *= target / len);
        }
    }
    out
}

fn norm_slice(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Fine and coarse levels of a cloud together with its three feature sets.
#[derive(Clone, Debug)]
pub struct FeaturedCloud {
    pub ms: MultiScaleCloud,
    /// Local features, one row per fine point.
    pub local: FeatureMatrix,
    /// Point features used for point assignment, one row per fine point.
    pub point: FeatureMatrix,
    /// Patch features, one row per coarse node.
    pub patch: FeatureMatrix,
}

impl FeaturedCloud {
    /// Describes `ms` with the built-in descriptor.
    pub fn describe(ms: MultiScaleCloud, cfg: &DescriptorConfig) -> Result<Self> {
        let local = compute_local_features(&ms.fine, cfg)?;
        let point = (cfg.point_scale > 0.0).then(|| scaled_point_features(&local, cfg.point_scale));
        Self::from_features(ms, local, point, None)
    }

    /// Assembles externally computed features. Missing point features default
    /// to the local ones; missing patch features are pooled from the local ones.
    pub fn from_features(
        ms: MultiScaleCloud,
        local: FeatureMatrix,
        point: Option<FeatureMatrix>,
        patch: Option<FeatureMatrix>,
    ) -> Result<Self> {
        if local.rows != ms.fine.len() {
            return Err(Error::SizeMismatch { features: local.rows, points: ms.fine.len() });
        }
        let point = match point {
            Some(p) if p.rows != ms.fine.len() => {
                return Err(Error::SizeMismatch { features: p.rows, points: ms.fine.len() })
            }
            Some(p) => p.with_level(FeatureLevel::Point),
            None => local.clone().with_level(FeatureLevel::Point),
        };
        let patch = match patch {
            Some(p) if p.rows != ms.num_patches() => {
                return Err(Error::SizeMismatch { features: p.rows, points: ms.num_patches() })
            }
            Some(p) => p.with_level(FeatureLevel::Patch),
            None => patch_features(&local, &ms)?,
        };
        Ok(FeaturedCloud { ms, local, point, patch })
    }
}
