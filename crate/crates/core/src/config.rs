//! Flat `key = value` pipeline configuration.

use crate::anomaly::AnomalyConfig;
use crate::descriptor::DescriptorConfig;
use crate::error::{Error, Result};
use crate::groundtruth::DEFAULT_N_G;
use crate::losses::CircleLossConfig;
use crate::memorybank::BankConfig;
use crate::registration::{RegisterConfig, Scoring};
use std::fmt::Write as _;
use std::path::Path;

/// Settings for ground-truth generation and the loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings {
    pub circle: CircleLossConfig,
    pub n_g: usize,
    /// Point-match distance; `None` means the fine voxel size.
    pub t: Option<f64>,
    /// Patch overlap radius; `None` means the fine voxel size.
    pub overlap_radius: Option<f64>,
}

impl Default for LossSettings {
    fn default() -> Self {
        LossSettings { circle: CircleLossConfig::default(), n_g: DEFAULT_N_G, t: None, overlap_radius: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub target_fine: usize,
    pub coarse_factor: f64,
    pub descriptor: DescriptorConfig,
    pub register: RegisterConfig,
    pub bank: BankConfig,
    pub anomaly: AnomalyConfig,
    pub loss: LossSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            target_fine: 4096,
            coarse_factor: 8.0,
            descriptor: DescriptorConfig::default(),
            register: RegisterConfig::default(),
            bank: BankConfig::default(),
            anomaly: AnomalyConfig::default(),
            loss: LossSettings::default(),
        }
    }
}

fn opt_to_string(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| format!("{x:?}"))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
}

fn parse_opt(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl PipelineConfig {
    /// All keys in serialization order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.descriptor;
        let m = &self.register.matching;
        let r = &self.register.ransac;
        let c = &self.loss.circle;
        vec![
            ("target_fine", self.target_fine.to_string()),
            ("coarse_factor", format!("{:?}", self.coarse_factor)),
            ("descriptor.neighbor_k", d.neighbor_k.to_string()),
            ("descriptor.angle_bins", d.angle_bins.to_string()),
            ("descriptor.normal_k", d.normal_k.to_string()),
            ("descriptor.point_scale", format!("{:?}", d.point_scale)),
            ("matching.n_c", m.n_c.to_string()),
            ("matching.k", m.k.to_string()),
            ("matching.sinkhorn_iters", m.sinkhorn_iters.to_string()),
            ("matching.alpha", format!("{:?}", m.alpha)),
            ("ransac.max_iters", r.max_iters.to_string()),
            ("ransac.inlier_thresh", opt_to_string(r.inlier_thresh)),
            ("ransac.thresh_voxels", format!("{:?}", r.thresh_voxels)),
            ("ransac.confidence", format!("{:?}", r.confidence)),
            ("ransac.edge_ratio", format!("{:?}", r.edge_ratio)),
            ("ransac.scoring", r.scoring.name().to_string()),
            ("ransac.seed", self.register.seed.to_string()),
            ("bank.rate", format!("{:?}", self.bank.rate)),
            ("bank.seed", self.bank.seed.to_string()),
            ("bank.template_index", self.bank.template_index.to_string()),
            ("anomaly.filter_k", self.anomaly.filter_k.to_string()),
            ("anomaly.smooth_n", self.anomaly.smooth_n.to_string()),
            ("loss.delta_p", format!("{:?}", c.delta_p)),
            ("loss.delta_n", format!("{:?}", c.delta_n)),
            ("loss.gamma", format!("{:?}", c.gamma)),
            ("loss.positive_overlap", format!("{:?}", c.positive_overlap)),
            ("loss.n_g", self.loss.n_g.to_string()),
            ("loss.t", opt_to_string(self.loss.t)),
            ("loss.overlap_radius", opt_to_string(self.loss.overlap_radius)),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "target_fine" => self.target_fine = parse(key, v)?,
            "coarse_factor" => self.coarse_factor = parse(key, v)?,
            "descriptor.neighbor_k" => self.descriptor.neighbor_k = parse(key, v)?,
            "descriptor.angle_bins" => self.descriptor.angle_bins = parse(key, v)?,
            "descriptor.normal_k" => self.descriptor.normal_k = parse(key, v)?,
            "descriptor.point_scale" => self.descriptor.point_scale = parse(key, v)?,
            "matching.n_c" => self.register.matching.n_c = parse(key, v)?,
            "matching.k" => self.register.matching.k = parse(key, v)?,
            "matching.sinkhorn_iters" => self.register.matching.sinkhorn_iters = parse(key, v)?,
            "matching.alpha" => self.register.matching.alpha = parse(key, v)?,
            "ransac.max_iters" => self.register.ransac.max_iters = parse(key, v)?,
            "ransac.inlier_thresh" => self.register.ransac.inlier_thresh = parse_opt(key, v)?,
            "ransac.thresh_voxels" => self.register.ransac.thresh_voxels = parse(key, v)?,
            "ransac.confidence" => self.register.ransac.confidence = parse(key, v)?,
            "ransac.edge_ratio" => self.register.ransac.edge_ratio = parse(key, v)?,
            "ransac.scoring" => self.register.ransac.scoring = v.parse::<Scoring>()?,
            "ransac.seed" => self.register.seed = parse(key, v)?,
            "bank.rate" => self.bank.rate = parse(key, v)?,
            "bank.seed" => self.bank.seed = parse(key, v)?,
            "bank.template_index" => self.bank.template_index = parse(key, v)?,
            "anomaly.filter_k" => self.anomaly.filter_k = parse(key, v)?,
            "anomaly.smooth_n" => self.anomaly.smooth_n = parse(key, v)?,
            "loss.delta_p" => self.loss.circle.delta_p = parse(key, v)?,
            "loss.delta_n" => self.loss.circle.delta_n = parse(key, v)?,
            "loss.gamma" => self.loss.circle.gamma = parse(key, v)?,
            "loss.positive_overlap" => self.loss.circle.positive_overlap = parse(key, v)?,
            "loss.n_g" => self.loss.n_g = parse(key, v)?,
            "loss.t" => self.loss.t = parse_opt(key, v)?,
            "loss.overlap_radius" => self.loss.overlap_radius = parse_opt(key, v)?,
            other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides such as those given on the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o.as_ref().split_once('=').ok_or_else(|| Error::invalid(format!("expected key=value, got {:?}", o.as_ref())))?;
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Parses a config file on top of the defaults. Blank lines and `#`
    /// comments are ignored.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::invalid(format!("config line {}: expected key = value", n + 1)))?;
            cfg.set(k, v).map_err(|e| Error::invalid(format!("config line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_fine == 0 {
            return Err(Error::invalid("target_fine must be positive"));
        }
        if !(self.coarse_factor > 1.0 && self.coarse_factor.is_finite()) {
            return Err(Error::invalid("coarse_factor must exceed 1"));
        }
        self.descriptor.validate()?;
        let m = &self.register.matching;
        if m.n_c == 0 || m.k == 0 || !m.alpha.is_finite() {
            return Err(Error::invalid("matching needs n_c, k >= 1 and a finite alpha"));
        }
        let r = &self.register.ransac;
        if r.max_iters == 0 || !(r.confidence > 0.0 && r.confidence <= 1.0) || !(0.0..1.0).contains(&r.edge_ratio) {
            return Err(Error::invalid("ransac needs max_iters >= 1, confidence in (0, 1], edge_ratio in [0, 1)"));
        }
        if r.inlier_thresh.is_some_and(|t| !(t > 0.0 && t.is_finite())) || !(r.thresh_voxels > 0.0 && r.thresh_voxels.is_finite()) {
            return Err(Error::invalid("ransac.inlier_thresh must be positive"));
        }
        if !(self.bank.rate > 0.0 && self.bank.rate <= 1.0) {
            return Err(Error::invalid("bank.rate must lie in (0, 1]"));
        }
        if self.anomaly.filter_k < 2 || self.anomaly.smooth_n == 0 {
            return Err(Error::invalid("anomaly needs filter_k >= 2 and smooth_n >= 1"));
        }
        self.loss.circle.validate()?;
        if self.loss.n_g == 0 {
            return Err(Error::invalid("loss.n_g must be positive"));
        }
        for v in [self.loss.t, self.loss.overlap_radius].into_iter().flatten() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid("loss distances must be positive"));
            }
        }
        Ok(())
    }
}
