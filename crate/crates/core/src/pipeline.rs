//! Dataset handling and the end-to-end detection run: prepare samples, build
//! the bank from the training set, score every test sample, evaluate.

use crate::anomaly::{detect, AnomalyResult};
use crate::config::PipelineConfig;
use crate::descriptor::FeaturedCloud;
use crate::error::{Error, Result};
use crate::eval::{auroc, p_auroc, ScoredSet};
use crate::features::{load_features, FeatureLevel};
use crate::geometry::{adaptive_voxel_size, apply_transform, build_multiscale, random_rigid, read_cloud, write_cloud, PointCloud};
use crate::memorybank::{build_bank, MemoryBank};
use crate::synth::{sample_anomalous, sample_normal, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    pub cloud: PointCloud,
}

impl Sample {
    /// 1 when any point is labeled anomalous, `None` for unlabeled clouds.
    pub fn object_label(&self) -> Option<u8> {
        self.cloud.labels.as_ref().map(|l| l.iter().any(|&v| v == 1) as u8)
    }
}

/// Reads every `.xyz` / `.ply` file in `dir`, sorted by file name. The sample
/// name is the file stem.
pub fn load_dir(dir: &Path) -> Result<Vec<Sample>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("xyz" | "ply")) {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no .xyz or .ply files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            Ok(Sample { name, cloud: read_cloud(p)? })
        })
        .collect()
}

/// Feature file for a sample and level inside a features directory:
/// `<name>.<level>.feat` (binary) or `<name>.<level>.csv`.
pub fn feature_path(dir: &Path, name: &str, level: FeatureLevel) -> Option<PathBuf> {
    ["feat", "csv"].iter().map(|ext| dir.join(format!("{name}.{}.{ext}", level.name()))).find(|p| p.exists())
}

/// Multi-scale decomposition, fine-level labels (nearest raw point), and
/// features: built-in, or loaded from `features_dir` when given. A missing
/// local feature file is an error; point and patch files are optional.
pub fn prepare(sample: &Sample, cfg: &PipelineConfig, features_dir: Option<&Path>) -> Result<FeaturedCloud> {
    let mut ms = build_multiscale(&sample.cloud, cfg.target_fine, cfg.coarse_factor)?;
    ms.fine.transfer_labels(&sample.cloud)?;
    let Some(dir) = features_dir else {
        return FeaturedCloud::describe(ms, &cfg.descriptor);
    };
    let local_path = feature_path(dir, &sample.name, FeatureLevel::Local).ok_or_else(|| {
        Error::io(
            format!("features for {} in {}", sample.name, dir.display()),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no <name>.local.feat or <name>.local.csv"),
        )
    })?;
    let local = load_features(&local_path, ms.fine.len())?;
    let point = feature_path(dir, &sample.name, FeatureLevel::Point).map(|p| load_features(&p, ms.fine.len())).transpose()?;
    let patch = feature_path(dir, &sample.name, FeatureLevel::Patch).map(|p| load_features(&p, ms.num_patches())).transpose()?;
    FeaturedCloud::from_features(ms, local, point, patch)
}

/// Per-sample detection output as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub schema_version: u32,
    pub name: String,
    pub object_score: f64,
    /// One per fine-level point.
    pub point_scores: Vec<f64>,
    /// Fine-level labels when the input cloud carried labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_labels: Option<Vec<u8>>,
    pub filtered_points: usize,
    /// Motion aligning the sample with the template, 3x4 row-major.
    pub transform: [[f64; 4]; 3],
    pub inliers: usize,
    pub inlier_ratio: f64,
}

impl DetectionRecord {
    pub fn new(name: &str, test: &FeaturedCloud, result: &AnomalyResult) -> Self {
        DetectionRecord {
            schema_version: SCHEMA_VERSION,
            name: name.to_string(),
            object_score: result.object_score,
            point_scores: result.point_scores.clone(),
            point_labels: test.ms.fine.labels.clone(),
            filtered_points: result.filter_mask.iter().filter(|&&m| m).count(),
            transform: result.transform_used.to_rows(),
            inliers: result.registration.inliers,
            inlier_ratio: result.registration.inlier_ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub object_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Run-level metrics. Contains no timestamps, so identical runs serialize to
/// identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_version: u32,
    pub o_auroc: Option<f64>,
    pub p_auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub o_auroc_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_auroc_error: Option<String>,
    pub bank_size: usize,
    pub failures: usize,
    pub samples: Vec<SampleSummary>,
}

impl Metrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }

    /// True when an AUROC could not be computed because only one class was present.
    pub fn degenerate(&self) -> bool {
        self.o_auroc.is_none() || self.p_auroc.is_none()
    }
}

/// Object-level and pooled point-level scored sets. `labels` overrides object
/// labels by sample name; otherwise they come from the point labels. Records
/// without matching point labels are left out of the point set.
pub fn scored_sets(records: &[DetectionRecord], labels: &BTreeMap<String, u8>) -> (ScoredSet, ScoredSet) {
    let mut objects = ScoredSet::default();
    let mut points = ScoredSet::default();
    for r in records {
        let from_points = r.point_labels.as_ref().map(|l| l.iter().any(|&v| v == 1) as u8);
        if let Some(label) = labels.get(&r.name).copied().or(from_points) {
            objects.extend(&[r.object_score], &[label]);
        }
        if let Some(pl) = &r.point_labels {
            if pl.len() == r.point_scores.len() {
                points.extend(&r.point_scores, pl);
            }
        }
    }
    (objects, points)
}

/// Object- and point-level AUROC over the detection records (see [`scored_sets`]).
pub fn evaluate_records(records: &[DetectionRecord], labels: &BTreeMap<String, u8>) -> (Result<f64>, Result<f64>) {
    let (objects, points) = scored_sets(records, labels);
    (auroc(&objects), p_auroc(&points))
}

fn split(r: Result<f64>) -> (Option<f64>, Option<String>) {
    match r {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

/// Everything a pipeline run produces.
pub struct PipelineRun {
    pub bank: MemoryBank,
    pub template: FeaturedCloud,
    /// Sorted by sample name.
    pub records: Vec<(String, Result<DetectionRecord>)>,
    pub metrics: Metrics,
}

/// Builds the bank from `train`, scores every test sample against it and
/// evaluates. Per-sample failures are recorded and the run continues.
/// `jobs` bounds the worker threads (0 = all cores); results do not depend on it.
pub fn run_pipeline(train: &[Sample], test: &[Sample], cfg: &PipelineConfig, features_dir: Option<&Path>, jobs: usize) -> Result<PipelineRun> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::invalid(e.to_string()))?;
    pool.install(|| {
        let prepared: Vec<FeaturedCloud> = train.par_iter().map(|s| prepare(s, cfg, features_dir)).collect::<Result<_>>()?;
        let (bank, _) = build_bank(&prepared, &cfg.bank, &cfg.register)?;
        let template = prepared.into_iter().nth(cfg.bank.template_index).expect("index checked by build_bank");
        let mut records: Vec<(String, Result<DetectionRecord>)> = test
            .par_iter()
            .map(|s| {
                let rec = prepare(s, cfg, features_dir).and_then(|fc| {
                    let res = detect(&fc, &template, &bank, &cfg.anomaly, &cfg.register)?;
                    Ok(DetectionRecord::new(&s.name, &fc, &res))
                });
                (s.name.clone(), rec)
            })
            .collect();
        records.sort_by(|a, b| a.0.cmp(&b.0));

        let labels: BTreeMap<String, u8> = test.iter().filter_map(|s| s.object_label().map(|l| (s.name.clone(), l))).collect();
        let ok: Vec<DetectionRecord> = records.iter().filter_map(|(_, r)| r.as_ref().ok().cloned()).collect();
        let (o, p) = evaluate_records(&ok, &labels);
        let (o_auroc, o_auroc_error) = split(o);
        let (p_auroc, p_auroc_error) = split(p);
        let samples = records
            .iter()
            .map(|(name, r)| SampleSummary {
                name: name.clone(),
                label: labels.get(name).copied(),
                object_score: r.as_ref().ok().map(|d| d.object_score),
                error: r.as_ref().err().map(|e| e.to_string()),
            })
            .collect();
        let metrics = Metrics {
            schema_version: SCHEMA_VERSION,
            o_auroc,
            p_auroc,
            o_auroc_error,
            p_auroc_error,
            bank_size: bank.len(),
            failures: records.iter().filter(|(_, r)| r.is_err()).count(),
            samples,
        };
        Ok(PipelineRun { bank, template, records, metrics })
    })
}

/// Parameters of a synthetic dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub shape: Shape,
    pub points: usize,
    pub n_train: usize,
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub defect_fraction: f64,
    pub seed: u64,
    /// Fine-level target used to size defects in fine voxels.
    pub target_fine: usize,
    /// Apply a random rigid motion to every test sample.
    pub rotate_test: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            shape: Shape::SphereBumps,
            points: 4000,
            n_train: 4,
            n_normal: 20,
            n_anomalous: 20,
            defect_fraction: 0.05,
            seed: 0,
            target_fine: 2048,
            rotate_test: false,
        }
    }
}

pub struct SynthDataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Fine voxel of the base shape; defect magnitudes are multiples of it.
    pub fine_voxel: f64,
}

/// Seeded training and test samples. Normal samples are fresh resamplings
/// of the base shape; anomalous ones carry one contiguous defect of
/// `defect_fraction * points` points displaced by 5 to 15 fine voxels.
pub fn synth_dataset(spec: &SynthSpec) -> Result<SynthDataset> {
    if !(spec.defect_fraction > 0.0 && spec.defect_fraction <= 0.2) {
        return Err(Error::invalid(format!("defect fraction must lie in (0, 0.2], got {}", spec.defect_fraction)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fine_voxel = adaptive_voxel_size(&sample_normal(spec.shape, spec.points, rng.gen())?, spec.target_fine, 0.02)?;
    let mut train = Vec::with_capacity(spec.n_train);
    for i in 0..spec.n_train {
        train.push(Sample { name: format!("train_{i:03}"), cloud: sample_normal(spec.shape, spec.points, rng.gen())? });
    }
    let mut test = Vec::with_capacity(spec.n_normal + spec.n_anomalous);
    for i in 0..spec.n_normal {
        test.push(Sample { name: format!("normal_{i:03}"), cloud: sample_normal(spec.shape, spec.points, rng.gen())? });
    }
    for i in 0..spec.n_anomalous {
        let magnitude = rng.gen_range(5.0..=15.0) * fine_voxel;
        let cloud = sample_anomalous(spec.shape, spec.points, spec.defect_fraction, magnitude, rng.gen())?;
        test.push(Sample { name: format!("anomalous_{i:03}"), cloud });
    }
    if spec.rotate_test {
        for s in &mut test {
            s.cloud = apply_transform(&s.cloud, &random_rigid(rng.gen(), std::f64::consts::PI, 1.0));
        }
    }
    Ok(SynthDataset { train, test, fine_voxel })
}

/// Writes `train/` and `test/` directories of labeled `.xyz` files plus a
/// `labels.csv` manifest (`name,label`) for the test set.
pub fn write_dataset(dir: &Path, data: &SynthDataset) -> Result<()> {
    let mut manifest = String::from("name,label\n");
    for (sub, samples) in [("train", &data.train), ("test", &data.test)] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(format!("creating {}", d.display()), e))?;
        for s in samples {
            write_cloud(&d.join(format!("{}.xyz", s.name)), &s.cloud)?;
            if sub == "test" {
                manifest.push_str(&format!("{},{}\n", s.name, s.object_label().unwrap_or(0)));
            }
        }
    }
    let path = dir.join("labels.csv");
    fs::write(&path, manifest).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads a `name,label` manifest; a header line is optional.
pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, u8>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 0 && line == "name,label") {
            continue;
        }
        let err = || Error::Parse { path: path.to_path_buf(), line: n + 1, msg: "expected name,label with label 0 or 1".into() };
        let (name, label) = line.rsplit_once(',').ok_or_else(err)?;
        let label = match label.trim() {
            "0" => 0,
            "1" => 1,
            _ => return Err(err()),
        };
        out.insert(name.trim().to_string(), label);
    }
    Ok(out)
}
