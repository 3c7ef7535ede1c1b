//! Pair directories: a cloud, its rigidly moved copy, the motion and the
//! ground-truth matches, plus the loss evaluation over them.

use crate::config::PipelineConfig;
use crate::descriptor::FeaturedCloud;
use crate::error::{Error, Result};
use crate::geometry::{read_cloud, write_cloud, MultiScaleCloud, PointCloud, RigidTransform};
use crate::groundtruth::{
    gt_point_matches, make_pair, overlap_matrix, patch_matches_from_overlap, PatchMatchSet, PointMatchSet,
    DEFAULT_PATCH_OVERLAP_THRESHOLD,
};
use crate::losses::{feature_align_loss, loss_pairs, point_match_loss, symmetric_overlap_circle_loss, LossReport, PointLevel};
use crate::pipeline::{prepare, Sample, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchMatch {
    pub p: usize,
    pub q: usize,
    pub overlap: f64,
}

/// Contents of `matches.json`. The decomposition settings are stored so the
/// patch and point indices can be reproduced from `P.xyz` and `Q.xyz`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMatches {
    pub schema_version: u32,
    pub target_fine: usize,
    pub coarse_factor: f64,
    pub overlap_radius: f64,
    pub t: f64,
    pub seed: u64,
    pub patch_matches: Vec<PatchMatch>,
    pub point_matches: Vec<PointMatchSet>,
}

impl PairMatches {
    pub fn patch_set(&self) -> PatchMatchSet {
        PatchMatchSet {
            pairs: self.patch_matches.iter().map(|m| (m.p, m.q)).collect(),
            overlaps: self.patch_matches.iter().map(|m| m.overlap).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroundTruthPair {
    pub p: PointCloud,
    pub q: PointCloud,
    pub t_gt: RigidTransform,
    pub matches: PairMatches,
}

fn decompose(cloud: &PointCloud, cfg: &PipelineConfig) -> Result<MultiScaleCloud> {
    crate::geometry::build_multiscale(cloud, cfg.target_fine, cfg.coarse_factor)
}

/// Moves `cloud` by a seeded rigid motion and computes patch and point
/// ground truth. Overlap radius and `t` default to the fine voxel of P.
pub fn ground_truth_pair(
    cloud: &PointCloud,
    cfg: &PipelineConfig,
    seed: u64,
    max_angle: f64,
    max_translation: f64,
) -> Result<GroundTruthPair> {
    let (p, q, t_gt) = make_pair(cloud, seed, max_angle, max_translation)?;
    let ms_p = decompose(&p, cfg)?;
    let ms_q = decompose(&q, cfg)?;
    let radius = cfg.loss.overlap_radius.unwrap_or(ms_p.fine_voxel);
    let t = cfg.loss.t.unwrap_or(ms_p.fine_voxel);
    let patches = patch_matches_from_overlap(&overlap_matrix(&ms_p, &ms_q, &t_gt, radius)?, DEFAULT_PATCH_OVERLAP_THRESHOLD);
    let points = gt_point_matches(&ms_p, &ms_q, &t_gt, &patches, cfg.loss.n_g, t, seed)?;
    let matches = PairMatches {
        schema_version: SCHEMA_VERSION,
        target_fine: cfg.target_fine,
        coarse_factor: cfg.coarse_factor,
        overlap_radius: radius,
        t,
        seed,
        patch_matches: patches
            .pairs
            .iter()
            .zip(&patches.overlaps)
            .map(|(&(p, q), &overlap)| PatchMatch { p, q, overlap })
            .collect(),
        point_matches: points,
    };
    Ok(GroundTruthPair { p, q, t_gt, matches })
}

/// Writes `P.xyz`, `Q.xyz`, `T_gt.txt` and `matches.json` into `dir`.
pub fn write_pair_dir(dir: &Path, pair: &GroundTruthPair) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    write_cloud(&dir.join("P.xyz"), &pair.p)?;
    write_cloud(&dir.join("Q.xyz"), &pair.q)?;
    let t_path = dir.join("T_gt.txt");
    fs::write(&t_path, pair.t_gt.to_text()).map_err(|e| Error::io(format!("writing {}", t_path.display()), e))?;
    let m_path = dir.join("matches.json");
    let json = serde_json::to_string_pretty(&pair.matches)? + "\n";
    fs::write(&m_path, json).map_err(|e| Error::io(format!("writing {}", m_path.display()), e))
}

pub fn read_pair_dir(dir: &Path) -> Result<GroundTruthPair> {
    let p = read_cloud(&dir.join("P.xyz"))?;
    let q = read_cloud(&dir.join("Q.xyz"))?;
    let t_path = dir.join("T_gt.txt");
    let t_text = fs::read_to_string(&t_path).map_err(|e| Error::io(format!("reading {}", t_path.display()), e))?;
    let t_gt = RigidTransform::parse_text(&t_text)?;
    let m_path = dir.join("matches.json");
    let m_text = fs::read_to_string(&m_path).map_err(|e| Error::io(format!("reading {}", m_path.display()), e))?;
    let matches: PairMatches = serde_json::from_str(&m_text)?;
    Ok(GroundTruthPair { p, q, t_gt, matches })
}

/// Feature alignment, point matching and overlap circle losses of a pair.
/// Features come from `features_dir` (`P.*` / `Q.*` files) when given,
/// otherwise from the built-in descriptor.
pub fn pair_loss(pair: &GroundTruthPair, cfg: &PipelineConfig, features_dir: Option<&Path>) -> Result<LossReport> {
    let mut cfg = *cfg;
    cfg.target_fine = pair.matches.target_fine;
    cfg.coarse_factor = pair.matches.coarse_factor;
    let fp = prepare(&Sample { name: "P".into(), cloud: pair.p.clone() }, &cfg, features_dir)?;
    let fq = prepare(&Sample { name: "Q".into(), cloud: pair.q.clone() }, &cfg, features_dir)?;
    check_indices(&fp, &fq, &pair.matches)?;
    let m = &cfg.register.matching;
    let l_f = feature_align_loss(&loss_pairs(&fp, &fq, &pair.matches.point_matches, PointLevel::Local)?, m.alpha, m.sinkhorn_iters)?;
    let l_p = point_match_loss(&loss_pairs(&fp, &fq, &pair.matches.point_matches, PointLevel::Point)?, m.alpha, m.sinkhorn_iters)?;
    let radius = pair.matches.overlap_radius;
    let o_pq = overlap_matrix(&fp.ms, &fq.ms, &pair.t_gt, radius)?;
    let o_qp = overlap_matrix(&fq.ms, &fp.ms, &pair.t_gt.inverse(), radius)?;
    let l_oc = symmetric_overlap_circle_loss(&fp.patch, &fq.patch, &o_pq, &o_qp, &cfg.loss.circle)?;
    Ok(LossReport::new(l_f, l_p, l_oc))
}

fn check_indices(fp: &FeaturedCloud, fq: &FeaturedCloud, m: &PairMatches) -> Result<()> {
    let bad = || Error::invalid("matches.json does not fit the decomposition of P.xyz / Q.xyz");
    for set in &m.point_matches {
        let (i, j) = set.patch_pair;
        let (np, nq) = (fp.ms.fine_of.get(i).ok_or_else(bad)?.len(), fq.ms.fine_of.get(j).ok_or_else(bad)?.len());
        if set.pairs.iter().any(|&(a, b)| a >= np || b >= nq) {
            return Err(bad());
        }
    }
    Ok(())
}
