//! Rotation-robust anomaly detection for 3D point clouds via registration to a
//! normal template.
//!
//! The pipeline decomposes each cloud into fine points and coarse patches,
//! describes fine points with a rotation-invariant histogram descriptor,
//! matches patches and points across clouds with optimal transport, aligns
//! samples with RANSAC, and scores test points against a coreset memory bank
//! of fused feature/coordinate vectors.

pub mod config;
pub mod descriptor;
pub mod anomaly;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod groundtruth;
pub mod losses;
pub mod memorybank;
pub mod matching;
pub mod pairs;
pub mod pipeline;
pub mod registration;
pub mod synth;

pub use error::{Error, Result};
