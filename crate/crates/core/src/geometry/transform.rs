use super::Vec3;
use crate::error::{Error, Result};
use nalgebra::{Matrix3, Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORTHO_TOL: f64 = 1e-9;

/// Proper rigid motion `p -> R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let t = RigidTransform { rotation, translation };
        t.validate()?;
        Ok(t)
    }

    pub fn identity() -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner();
        RigidTransform { rotation, translation }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("rigid transform"));
        }
        let gram = self.rotation.transpose() * self.rotation;
        let off = (gram - Matrix3::identity()).abs().max();
        let det = self.rotation.determinant();
        if off > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal with det +1 (|RtR-I|={off:.3e}, det={det})"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Rotation angle in radians, from the trace.
    pub fn angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// Row-major 3×4 `[R | t]`.
    pub fn to_rows(&self) -> [[f64; 4]; 3] {
        let mut rows = [[0.0; 4]; 3];
        for (r, row) in rows.iter_mut().enumerate() {
            for c in 0..3 {
                row[c] = self.rotation[(r, c)];
            }
            row[3] = self.translation[r];
        }
        rows
    }

    pub fn from_rows(rows: &[[f64; 4]; 3]) -> Result<Self> {
        let rotation = Matrix3::from_fn(|r, c| rows[r][c]);
        let translation = Vec3::new(rows[0][3], rows[1][3], rows[2][3]);
        Self::new(rotation, translation)
    }

    /// Three whitespace-separated lines of four numbers.
    pub fn to_text(&self) -> String {
        self.to_rows()
            .iter()
            .map(|row| row.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|e| Error::invalid(format!("transform entry {tok:?}: {e}"))))
            .collect::<Result<_>>()?;
        if values.len() != 12 {
            return Err(Error::invalid(format!("transform needs 12 values, found {}", values.len())));
        }
        let mut rows = [[0.0; 4]; 3];
        for (i, v) in values.into_iter().enumerate() {
            rows[i / 4][i % 4] = v;
        }
        Self::from_rows(&rows)
    }
}

/// Seeded random rigid motion: uniform axis on the sphere, angle uniform in
/// `[0, max_angle]`, translation components uniform in `[-max_translation, max_translation]`.
pub fn random_rigid(seed: u64, max_angle: f64, max_translation: f64) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_rigid_with(&mut rng, max_angle, max_translation)
}

pub(crate) fn random_rigid_with<R: Rng>(rng: &mut R, max_angle: f64, max_translation: f64) -> RigidTransform {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).max(0.0).sqrt();
    let axis = Vec3::new(s * phi.cos(), s * phi.sin(), z);
    let angle = rng.gen::<f64>() * max_angle;
    let mut translation = Vec3::zeros();
    if max_translation > 0.0 {
        for c in translation.iter_mut() {
            *c = rng.gen_range(-max_translation..=max_translation);
        }
    }
    RigidTransform::from_axis_angle(axis, angle, translation)
}
