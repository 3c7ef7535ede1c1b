//! Point clouds, rigid transforms, neighbor search and multi-scale decomposition.

mod io;
mod kdtree;
mod transform;
pub(crate) mod voxel;

pub use io::{read_cloud, read_ply, read_xyz, write_cloud, write_ply, write_ply_colored, write_xyz};
pub use kdtree::{KdTree, KnnResult};
pub use transform::{random_rigid, RigidTransform};
pub use voxel::{
    adaptive_voxel_size, adaptive_voxel_size_with, build_multiscale, build_multiscale_with_voxel,
    voxel_downsample, MultiScaleCloud,
};

use crate::error::{Error, Result};
use nalgebra::Vector3;

pub type Vec3 = Vector3<f64>;

/// Squared Euclidean distance.
///
/// The three squared differences are summed smallest-first, so the result is
/// bitwise identical under any signed permutation of the coordinate axes.
#[inline]
pub fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    sum3_sorted((a.x - b.x) * (a.x - b.x), (a.y - b.y) * (a.y - b.y), (a.z - b.z) * (a.z - b.z))
}

/// Dot product with an axis-order independent summation.
#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    sum3_sorted(a.x * b.x, a.y * b.y, a.z * b.z)
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn sum3_sorted(a: f64, b: f64, c: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if c <= lo {
        (c + lo) + hi
    } else if c <= hi {
        (lo + c) + hi
    } else {
        (lo + hi) + c
    }
}

/// Ordered list of 3D points with optional per-point anomaly labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub labels: Option<Vec<u8>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        let cloud = PointCloud { points, labels: None };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn with_labels(points: Vec<Vec3>, labels: Vec<u8>) -> Result<Self> {
        let cloud = PointCloud { points, labels: Some(labels) };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("point coordinates"));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.points.len() {
                return Err(Error::SizeMismatch { features: labels.len(), points: self.points.len() });
            }
            if labels.iter().any(|&l| l > 1) {
                return Err(Error::invalid("labels must be 0 or 1"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        let mut sum = Vec3::zeros();
        for p in &self.points {
            sum += p;
        }
        sum / self.points.len().max(1) as f64
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bbox(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi - lo).norm()
    }

    /// Exact k nearest neighbors. Builds a throwaway tree; hold a [`KdTree`]
    /// for repeated queries.
    pub fn knn(&self, query: &Vec3, k: usize) -> Result<KnnResult> {
        KdTree::new(&self.points).knn(query, k)
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Labels for `self` taken from the nearest point of `labeled`.
    pub fn transfer_labels(&mut self, labeled: &PointCloud) -> Result<()> {
        let Some(src) = &labeled.labels else {
            return Ok(());
        };
        let tree = KdTree::new(&labeled.points);
        let mut out = Vec::with_capacity(self.len());
        for p in &self.points {
            let nn = tree.nearest(p).ok_or(Error::EmptyInput)?;
            out.push(src[nn]);
        }
        self.labels = Some(out);
        Ok(())
    }
}

pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| t.apply(p)).collect(),
        labels: cloud.labels.clone(),
    }
}

pub fn knn(cloud: &PointCloud, query: &Vec3, k: usize) -> Result<KnnResult> {
    cloud.knn(query, k)
}
