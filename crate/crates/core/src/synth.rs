//! Synthetic shapes with controllable surface defects.

use crate::descriptor::estimate_normals;
use crate::error::{Error, Result};
use crate::geometry::{dist2, PointCloud, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    /// Unit sphere carrying six bumps of different sizes at irregular positions.
    SphereBumps,
    /// Gently undulating square sheet; defects are pushed inward.
    PlaneDents,
    /// Plain unit sphere, no distinguishing geometry.
    Sphere,
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere-bumps" => Ok(Shape::SphereBumps),
            "plane-dents" => Ok(Shape::PlaneDents),
            "sphere" => Ok(Shape::Sphere),
            other => Err(Error::invalid(format!("unknown shape {other:?} (sphere-bumps, plane-dents, sphere)"))),
        }
    }
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::SphereBumps => "sphere-bumps",
            Shape::PlaneDents => "plane-dents",
            Shape::Sphere => "sphere",
        }
    }
}

/// (polar deg, azimuth deg, height, angular width rad)
const BUMPS: [(f64, f64, f64, f64); 6] = [
    (20.0, 10.0, 0.30, 0.22),
    (80.0, 100.0, 0.22, 0.16),
    (115.0, 215.0, 0.35, 0.30),
    (60.0, 290.0, 0.18, 0.14),
    (150.0, 40.0, 0.28, 0.20),
    (95.0, 165.0, 0.15, 0.25),
];

fn dir(polar_deg: f64, azimuth_deg: f64) -> Vec3 {
    let (t, p) = (polar_deg.to_radians(), azimuth_deg.to_radians());
    Vec3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos())
}

fn bumpy_radius(u: &Vec3) -> f64 {
    1.0 + BUMPS
        .iter()
        .map(|&(t, p, h, w)| {
            let ang = u.dot(&dir(t, p)).clamp(-1.0, 1.0).acos();
            h * (-(ang * ang) / (2.0 * w * w)).exp()
        })
        .sum::<f64>()
}

fn sheet_height(x: f64, y: f64) -> f64 {
    0.18 * (1.7 * x + 0.4).sin() * (1.3 * y - 0.2).cos() + 0.12 * x * y + 0.08 * (3.1 * y + 1.0).sin()
}

fn sample_surface(shape: Shape, rng: &mut impl Rng) -> Vec3 {
    match shape {
        Shape::SphereBumps | Shape::Sphere => {
            let z: f64 = rng.gen_range(-1.0..=1.0);
            let phi: f64 = rng.gen_range(0.0..TAU);
            let s = (1.0 - z * z).max(0.0).sqrt();
            let u = Vec3::new(s * phi.cos(), s * phi.sin(), z);
            if shape == Shape::Sphere {
                u
            } else {
                u * bumpy_radius(&u)
            }
        }
        Shape::PlaneDents => {
            let x: f64 = rng.gen_range(-1.0..=1.0);
            let y: f64 = rng.gen_range(-1.0..=1.0);
            Vec3::new(x, y, sheet_height(x, y))
        }
    }
}

/// Fresh seeded sampling of the defect-free shape, all labels 0.
pub fn sample_normal(shape: Shape, n_points: usize, seed: u64) -> Result<PointCloud> {
    if n_points == 0 {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec3> = (0..n_points).map(|_| sample_surface(shape, &mut rng)).collect();
    PointCloud::with_labels(points, vec![0; n_points])
}

/// A normal sample with one contiguous patch of `defect_fraction * n` points
/// displaced along the surface normal by `magnitude`, labeled 1. Bumps on
/// closed shapes protrude; sheet defects are dents.
pub fn sample_anomalous(shape: Shape, n_points: usize, defect_fraction: f64, magnitude: f64, seed: u64) -> Result<PointCloud> {
    if !(defect_fraction > 0.0 && defect_fraction <= 0.2) {
        return Err(Error::invalid(format!("defect fraction must lie in (0, 0.2], got {defect_fraction}")));
    }
    let mut cloud = sample_normal(shape, n_points, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_defe_c7);
    let center = match shape {
        // keep sheet defects away from the border
        Shape::PlaneDents => {
            let (x, y) = (rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6));
            Vec3::new(x, y, sheet_height(x, y))
        }
        _ => cloud.points[rng.gen_range(0..n_points)],
    };
    let count = ((defect_fraction * n_points as f64).round() as usize).max(1);
    let mut order: Vec<usize> = (0..n_points).collect();
    order.sort_by(|&a, &b| dist2(&cloud.points[a], &center).total_cmp(&dist2(&cloud.points[b], &center)).then(a.cmp(&b)));
    let normals = estimate_normals(&cloud, 16)?;
    let sign = if shape == Shape::PlaneDents { -1.0 } else { 1.0 };
    let labels = cloud.labels.as_mut().expect("normal samples are labeled");
    for &i in &order[..count] {
        let mut n = normals[i];
        // sheet normals point up, closed-shape normals point away from the origin
        let up = if shape == Shape::PlaneDents { n.z } else { n.dot(&cloud.points[i]) };
        if up < 0.0 {
            n = -n;
        }
        cloud.points[i] += n * (sign * magnitude);
        labels[i] = 1;
    }
    Ok(cloud)
}
