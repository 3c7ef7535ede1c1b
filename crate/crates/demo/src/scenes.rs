use pcad::anomaly::detect;
use pcad::config::PipelineConfig;
use pcad::descriptor::FeaturedCloud;
use pcad::eval::{auroc, roc_curve};
use pcad::geometry::{apply_transform, PointCloud};
use pcad::groundtruth::make_pair;
use pcad::memorybank::{build_bank, MemoryBank};
use pcad::pipeline::{prepare, scored_sets, synth_dataset, DetectionRecord, Sample, SynthSpec};
use pcad::registration::register;
use pcad::synth::{sample_normal, Shape};
use pcad::{Error, Result};
use serde::Serialize;
use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

const TRAIN_SEED: u64 = 1000;
const MAX_CURVE_POINTS: usize = 400;

/// Sizes kept small enough for interactive use in a browser.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DemoSettings {
    pub shape: Shape,
    pub points: usize,
    pub target_fine: usize,
    pub n_train: usize,
}

impl Default for DemoSettings {
    fn default() -> Self {
        DemoSettings { shape: Shape::SphereBumps, points: 2500, target_fine: 1024, n_train: 2 }
    }
}

impl DemoSettings {
    fn config(&self) -> PipelineConfig {
        PipelineConfig { target_fine: self.target_fine, ..Default::default() }
    }

    fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            shape: self.shape,
            points: self.points,
            n_train: 0,
            n_normal: 0,
            n_anomalous: 0,
            seed,
            target_fine: self.target_fine,
            ..Default::default()
        }
    }
}

struct Model {
    template: FeaturedCloud,
    bank: MemoryBank,
}

thread_local! {
    static MODEL: RefCell<Option<(DemoSettings, Rc<Model>)>> = const { RefCell::new(None) };
}

/// Bank and template from seeded normal samples, cached per settings.
fn model(settings: &DemoSettings) -> Result<Rc<Model>> {
    if let Some(m) = MODEL.with(|c| c.borrow().as_ref().filter(|(s, _)| s == settings).map(|(_, m)| m.clone())) {
        return Ok(m);
    }
    let cfg = settings.config();
    let data = synth_dataset(&SynthSpec { n_train: settings.n_train, ..settings.spec(TRAIN_SEED) })?;
    let train = data.train.iter().map(|s| prepare(s, &cfg, None)).collect::<Result<Vec<_>>>()?;
    let (bank, _) = build_bank(&train, &cfg.bank, &cfg.register)?;
    let template = train.into_iter().nth(cfg.bank.template_index).ok_or(Error::EmptyInput)?;
    let m = Rc::new(Model { template, bank });
    MODEL.with(|c| *c.borrow_mut() = Some((*settings, m.clone())));
    Ok(m)
}

fn coords(cloud: &PointCloud) -> Vec<[f32; 3]> {
    cloud.points.iter().map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect()
}

fn thin(curve: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    if curve.len() <= MAX_CURVE_POINTS {
        return curve;
    }
    let step = curve.len().div_ceil(MAX_CURVE_POINTS);
    let last = *curve.last().expect("non-empty curve");
    let mut out: Vec<(f64, f64)> = curve.into_iter().step_by(step).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

#[derive(Debug, Serialize)]
pub struct DetectionScene {
    pub points: Vec<[f32; 3]>,
    pub scores: Vec<f32>,
    pub labels: Vec<u8>,
    pub object_score: f64,
    pub inlier_ratio: f64,
    pub bank_size: usize,
}

/// One test sample, anomalous when `defect_fraction > 0`, scored against the
/// cached bank. Points are the sample's fine level in its own frame.
pub fn detection_scene(settings: &DemoSettings, seed: u64, defect_fraction: f64, rotate: bool) -> Result<DetectionScene> {
    let anomalous = defect_fraction > 0.0;
    let spec = SynthSpec {
        n_normal: usize::from(!anomalous),
        n_anomalous: usize::from(anomalous),
        defect_fraction: if anomalous { defect_fraction } else { 0.05 },
        rotate_test: rotate,
        ..settings.spec(seed)
    };
    let sample = synth_dataset(&spec)?.test.pop().ok_or(Error::EmptyInput)?;
    let m = model(settings)?;
    let cfg = settings.config();
    let fc = prepare(&sample, &cfg, None)?;
    let res = detect(&fc, &m.template, &m.bank, &cfg.anomaly, &cfg.register)?;
    Ok(DetectionScene {
        points: coords(&fc.ms.fine),
        scores: res.point_scores.iter().map(|&v| v as f32).collect(),
        labels: fc.ms.fine.labels.clone().unwrap_or_else(|| vec![0; fc.ms.fine.len()]),
        object_score: res.object_score,
        inlier_ratio: res.registration.inlier_ratio,
        bank_size: m.bank.len(),
    })
}

#[derive(Debug, Serialize)]
pub struct RegistrationScene {
    /// Fine points of P before alignment.
    pub initial: Vec<[f32; 3]>,
    /// The same points moved by the estimated transform.
    pub aligned: Vec<[f32; 3]>,
    pub target: Vec<[f32; 3]>,
    pub rre_deg: f64,
    pub rte: f64,
    pub inliers: usize,
    pub correspondences: usize,
    pub fine_voxel: f64,
}

/// Registers a sampled shape with a copy moved by a random rigid motion of
/// at most `max_angle_deg` degrees.
pub fn registration_scene(settings: &DemoSettings, seed: u64, max_angle_deg: f64) -> Result<RegistrationScene> {
    if !(0.0..=180.0).contains(&max_angle_deg) {
        return Err(Error::InvalidArgument("angle must lie in [0, 180] degrees".into()));
    }
    let cfg = settings.config();
    let cloud = sample_normal(settings.shape, settings.points, seed)?;
    let (p, q, t_gt) = make_pair(&cloud, seed, max_angle_deg.to_radians(), 0.5)?;
    let fp = prepare(&Sample { name: "P".into(), cloud: p }, &cfg, None)?;
    let fq = prepare(&Sample { name: "Q".into(), cloud: q }, &cfg, None)?;
    let report = register(&fp, &fq, &cfg.register)?.with_ground_truth(&t_gt);
    Ok(RegistrationScene {
        initial: coords(&fp.ms.fine),
        aligned: coords(&apply_transform(&fp.ms.fine, &report.transform)),
        target: coords(&fq.ms.fine),
        rre_deg: report.rre_deg.unwrap_or(f64::NAN),
        rte: report.rte.unwrap_or(f64::NAN),
        inliers: report.inliers,
        correspondences: report.correspondences,
        fine_voxel: fp.ms.fine_voxel,
    })
}

#[derive(Debug, Serialize)]
pub struct SampleScore {
    pub name: String,
    pub label: u8,
    pub score: f64,
}

#[derive(Debug, Serialize)]
pub struct RocScene {
    pub o_auroc: f64,
    pub p_auroc: f64,
    pub object_curve: Vec<(f64, f64)>,
    pub point_curve: Vec<(f64, f64)>,
    pub samples: Vec<SampleScore>,
}

/// `per_class` normal and `per_class` anomalous samples scored against the
/// cached bank, with object- and point-level ROC curves.
pub fn roc_scene(settings: &DemoSettings, seed: u64, per_class: usize, rotate: bool) -> Result<RocScene> {
    if per_class == 0 {
        return Err(Error::InvalidArgument("need at least one sample per class".into()));
    }
    let spec = SynthSpec { n_normal: per_class, n_anomalous: per_class, rotate_test: rotate, ..settings.spec(seed) };
    let data = synth_dataset(&spec)?;
    let m = model(settings)?;
    let cfg = settings.config();
    let mut records = Vec::with_capacity(data.test.len());
    for s in &data.test {
        let fc = prepare(s, &cfg, None)?;
        let res = detect(&fc, &m.template, &m.bank, &cfg.anomaly, &cfg.register)?;
        records.push(DetectionRecord::new(&s.name, &fc, &res));
    }
    let labels: BTreeMap<String, u8> = data.test.iter().filter_map(|s| Some((s.name.clone(), s.object_label()?))).collect();
    let (objects, points) = scored_sets(&records, &labels);
    Ok(RocScene {
        o_auroc: auroc(&objects)?,
        p_auroc: auroc(&points)?,
        object_curve: roc_curve(&objects)?,
        point_curve: thin(roc_curve(&points)?),
        samples: records.iter().map(|r| SampleScore { name: r.name.clone(), label: labels[&r.name], score: r.object_score }).collect(),
    })
}
