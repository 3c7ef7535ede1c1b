use super::{KdTree, PointCloud, Vec3};
use crate::error::{Error, Result};
use std::collections::{BTreeMap, HashSet};

pub const DEFAULT_REL_TOL: f64 = 0.02;
pub const DEFAULT_MAX_ITERS: usize = 40;

#[inline]
fn voxel_key(p: &Vec3, voxel_size: f64) -> [i64; 3] {
    [(p.x / voxel_size).floor() as i64, (p.y / voxel_size).floor() as i64, (p.z / voxel_size).floor() as i64]
}

/// One centroid per occupied voxel, in ascending lexicographic voxel order.
/// Labels are not carried over.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::invalid(format!("voxel size must be positive, got {voxel_size}")));
    }
    let mut cells: BTreeMap<[i64; 3], (Vec3, usize)> = BTreeMap::new();
    for p in &cloud.points {
        let cell = cells.entry(voxel_key(p, voxel_size)).or_insert((Vec3::zeros(), 0));
        cell.0 += p;
        cell.1 += 1;
    }
    let points = cells.into_values().map(|(sum, n)| sum / n as f64).collect();
    Ok(PointCloud { points, labels: None })
}

fn occupied_voxels(cloud: &PointCloud, voxel_size: f64) -> usize {
    cloud.points.iter().map(|p| voxel_key(p, voxel_size)).collect::<HashSet<_>>().len()
}

/// Voxel size whose downsampled count is within `rel_tol * target_n` of
/// `target_n`, found by bisection of `[diag / 10000, diag]`.
pub fn adaptive_voxel_size(cloud: &PointCloud, target_n: usize, rel_tol: f64) -> Result<f64> {
    adaptive_voxel_size_with(cloud, target_n, rel_tol, DEFAULT_MAX_ITERS)
}

pub fn adaptive_voxel_size_with(cloud: &PointCloud, target_n: usize, rel_tol: f64, max_iters: usize) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput);
    }
    if target_n == 0 {
        return Err(Error::invalid("target point count must be positive"));
    }
    if target_n > cloud.len() {
        return Err(Error::TargetExceedsCloud { target: target_n, size: cloud.len() });
    }
    if !(rel_tol > 0.0 && rel_tol < 0.5) {
        return Err(Error::invalid(format!("rel_tol must lie in (0, 0.5), got {rel_tol}")));
    }
    let diag = cloud.bbox_diagonal();
    if diag == 0.0 {
        // all points coincide; any size gives one voxel
        return Ok(1.0);
    }
    let tol = rel_tol * target_n as f64;
    let miss = |count: usize| (count as f64 - target_n as f64).abs();

    let mut lo = diag / 10_000.0;
    let mut hi = diag;
    let lo_count = occupied_voxels(cloud, lo);
    let mut best = (miss(lo_count), lo);
    if best.0 <= tol {
        return Ok(lo);
    }
    for _ in 0..max_iters {
        let mid = 0.5 * (lo + hi);
        let count = occupied_voxels(cloud, mid);
        let m = miss(count);
        if m < best.0 {
            best = (m, mid);
        }
        if m <= tol {
            return Ok(mid);
        }
        if count > target_n {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best.1)
}

/// Fine cloud, coarse node cloud, and the nearest-node partition of the fine
/// points into patches.
#[derive(Clone, Debug)]
pub struct MultiScaleCloud {
    pub fine: PointCloud,
    pub coarse: PointCloud,
    /// Coarse node of each fine point.
    pub patch_of: Vec<usize>,
    /// Fine members of each coarse node, ascending.
    pub fine_of: Vec<Vec<usize>>,
    pub fine_voxel: f64,
    pub coarse_voxel: f64,
}

impl MultiScaleCloud {
    pub fn patch_points(&self, node: usize) -> Vec<Vec3> {
        self.fine_of[node].iter().map(|&i| self.fine.points[i]).collect()
    }

    pub fn num_patches(&self) -> usize {
        self.coarse.len()
    }
}

pub fn build_multiscale(cloud: &PointCloud, target_fine: usize, coarse_factor: f64) -> Result<MultiScaleCloud> {
    if !(coarse_factor > 1.0) {
        return Err(Error::invalid(format!("coarse factor must exceed 1, got {coarse_factor}")));
    }
    let v = adaptive_voxel_size(cloud, target_fine, DEFAULT_REL_TOL)?;
    build_multiscale_with_voxel(cloud, v, coarse_factor)
}

/// Multi-scale decomposition at a fixed fine voxel size.
pub fn build_multiscale_with_voxel(cloud: &PointCloud, fine_voxel: f64, coarse_factor: f64) -> Result<MultiScaleCloud> {
    if !(coarse_factor > 1.0) {
        return Err(Error::invalid(format!("coarse factor must exceed 1, got {coarse_factor}")));
    }
    let fine = voxel_downsample(cloud, fine_voxel)?;
    let coarse_voxel = fine_voxel * coarse_factor;
    let coarse = voxel_downsample(&fine, coarse_voxel)?;
    if coarse.is_empty() {
        return Err(Error::Degenerate("coarse level is empty"));
    }
    Ok(group_points(fine, coarse, fine_voxel, coarse_voxel))
}

pub(crate) fn group_points(fine: PointCloud, coarse: PointCloud, fine_voxel: f64, coarse_voxel: f64) -> MultiScaleCloud {
    let tree = KdTree::new(&coarse.points);
    let mut patch_of: Vec<usize> = fine.points.iter().map(|p| tree.nearest(p).expect("coarse non-empty")).collect();
    let mut fine_of = vec![Vec::new(); coarse.len()];
    for (i, &j) in patch_of.iter().enumerate() {
        fine_of[j].push(i);
    }
    // A node can lose all its members to closer neighbors. Dropping it leaves
    // every other argmin unchanged and keeps the index order.
    if fine_of.iter().any(Vec::is_empty) {
        let keep: Vec<usize> = (0..coarse.len()).filter(|&j| !fine_of[j].is_empty()).collect();
        let mut remap = vec![usize::MAX; coarse.len()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        for j in patch_of.iter_mut() {
            *j = remap[*j];
        }
        let coarse = coarse.select(&keep);
        let fine_of = keep.iter().map(|&j| std::mem::take(&mut fine_of[j])).collect();
        return MultiScaleCloud { fine, coarse, patch_of, fine_of, fine_voxel, coarse_voxel };
    }
    MultiScaleCloud { fine, coarse, patch_of, fine_of, fine_voxel, coarse_voxel }
}
