//! Memory bank of normal fused feature/coordinate vectors.

use crate::descriptor::FeaturedCloud;
use crate::error::{Error, Result};
use crate::features::{FeatureLevel, FeatureMatrix};
use crate::geometry::{apply_transform, Vec3};
use crate::registration::{register, RegisterConfig, RegistrationReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const BANK_MAGIC: &[u8; 8] = b"R2IBANK1";
const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub gamma_f: f64,
    pub gamma_c: f64,
}

impl NormalizationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_f > 0.0 && self.gamma_f.is_finite() && self.gamma_c > 0.0 && self.gamma_c.is_finite()) {
            return Err(Error::invalid("normalization parameters must be positive and finite"));
        }
        Ok(())
    }
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn max_or_one(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        1.0
    }
}

/// Largest row norm of the stacked training features and coordinates.
pub fn norm_params(features: &FeatureMatrix, coords: &[Vec3]) -> Result<NormalizationParams> {
    if features.rows == 0 || coords.is_empty() {
        return Err(Error::EmptyInput);
    }
    let gamma_f = features.iter_rows().map(row_norm).fold(0.0, f64::max);
    let gamma_c = coords.iter().map(|c| c.norm()).fold(0.0, f64::max);
    Ok(NormalizationParams { gamma_f: max_or_one(gamma_f), gamma_c: max_or_one(gamma_c) })
}

/// Rows `[features_i / gamma_f, coords_i / gamma_c]`.
pub fn fuse(features: &FeatureMatrix, coords: &[Vec3], params: &NormalizationParams) -> Result<FeatureMatrix> {
    if features.rows != coords.len() {
        return Err(Error::SizeMismatch { features: features.rows, points: coords.len() });
    }
    params.validate()?;
    let dim = features.dim + 3;
    let mut data = Vec::with_capacity(features.rows * dim);
    for (row, c) in features.iter_rows().zip(coords) {
        data.extend(row.iter().map(|v| v / params.gamma_f));
        data.extend(c.iter().map(|v| v / params.gamma_c));
    }
    FeatureMatrix::new(features.rows, dim, data, FeatureLevel::Local)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy k-center selection of `max(1, ceil(rate * n))` rows: a seeded random
/// first pick, then repeatedly the row farthest from the current selection
/// (ties to the lowest index). Returned in selection order.
pub fn coreset_greedy(rows: &FeatureMatrix, rate: f64, seed: u64) -> Result<Vec<usize>> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid(format!("coreset rate must lie in (0, 1], got {rate}")));
    }
    let n = rows.rows;
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let m = ((rate * n as f64).ceil() as usize).clamp(1, n);
    let first = ChaCha8Rng::seed_from_u64(seed).gen_range(0..n);
    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    let mut next = first;
    loop {
        selected.push(next);
        taken[next] = true;
        if selected.len() == m {
            break;
        }
        let center = rows.row(next);
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = sq_dist(rows.row(i), center);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if nearest[i] > best.0 {
                best = (nearest[i], i);
            }
        }
        next = best.1;
    }
    Ok(selected)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    pub entries: FeatureMatrix,
    pub params: NormalizationParams,
    /// Rows aggregated before subsampling; unknown for banks read from disk.
    pub source_count: Option<usize>,
}

impl MemoryBank {
    pub fn new(entries: FeatureMatrix, params: NormalizationParams, source_count: Option<usize>) -> Result<Self> {
        if entries.rows == 0 {
            return Err(Error::EmptyInput);
        }
        if entries.dim < 4 {
            return Err(Error::invalid("fused rows need at least one feature column plus three coordinates"));
        }
        params.validate()?;
        Ok(MemoryBank { entries, params, source_count })
    }

    pub fn len(&self) -> usize {
        self.entries.rows
    }

    pub fn is_empty(&self) -> bool {
        self.entries.rows == 0
    }

    pub fn fused_dim(&self) -> usize {
        self.entries.dim
    }

    /// Feature dimension before fusion.
    pub fn feature_dim(&self) -> usize {
        self.entries.dim - 3
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.entries.data.len() * 4);
        out.extend_from_slice(BANK_MAGIC);
        out.extend_from_slice(&(self.entries.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.params.gamma_f as f32).to_le_bytes());
        out.extend_from_slice(&(self.params.gamma_c as f32).to_le_bytes());
        for v in &self.entries.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != BANK_MAGIC {
            return Err(Error::BadMagic("R2IBANK1"));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::UnexpectedEof);
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
        let (m, dim) = (u32_at(8), u32_at(12));
        let params = NormalizationParams { gamma_f: f32_at(16), gamma_c: f32_at(20) };
        let want = m.checked_mul(dim).and_then(|c| c.checked_mul(4)).ok_or(Error::invalid("bank size overflows"))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() < want {
            return Err(Error::UnexpectedEof);
        }
        let data = body[..want].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        MemoryBank::new(FeatureMatrix::new(m, dim, data, FeatureLevel::Local)?, params, None)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

/// Exact nearest-entry Euclidean distance.
pub fn nn_distance(bank: &MemoryBank, row: &[f64]) -> Result<f64> {
    if row.len() != bank.fused_dim() {
        return Err(Error::DimMismatch { expected: bank.fused_dim(), got: row.len() });
    }
    Ok(bank.entries.iter_rows().map(|e| sq_dist(e, row)).fold(f64::INFINITY, f64::min).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BankConfig {
    pub rate: f64,
    pub seed: u64,
    pub template_index: usize,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig { rate: 0.1, seed: 0, template_index: 0 }
    }
}

/// Aligns every training sample to the template, fuses local features with
/// the aligned coordinates, and subsamples the aggregate with the greedy
/// coreset. Returns the bank and one registration report per sample (the
/// template's own report is the identity).
pub fn build_bank(train: &[FeaturedCloud], cfg: &BankConfig, reg: &RegisterConfig) -> Result<(MemoryBank, Vec<RegistrationReport>)> {
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }
    let template = train
        .get(cfg.template_index)
        .ok_or(Error::IndexOutOfRange { index: cfg.template_index, len: train.len() })?;
    let dim = template.local.dim;
    let mut reports = Vec::with_capacity(train.len());
    let mut coords: Vec<Vec3> = Vec::new();
    let mut feats: Vec<f64> = Vec::new();
    for (s, sample) in train.iter().enumerate() {
        if sample.local.dim != dim {
            return Err(Error::DimMismatch { expected: dim, got: sample.local.dim });
        }
        let report = if s == cfg.template_index {
            RegistrationReport::identity(sample.ms.fine.len())
        } else {
            register(sample, template, reg).map_err(|e| Error::RegistrationFailed(format!("training sample {s}: {e}")))?
        };
        coords.extend(apply_transform(&sample.ms.fine, &report.transform).points);
        feats.extend_from_slice(&sample.local.data);
        reports.push(report);
    }
    let stacked = FeatureMatrix::new(coords.len(), dim, feats, FeatureLevel::Local)?;
    let params = norm_params(&stacked, &coords)?;
    let fused = fuse(&stacked, &coords, &params)?;
    let keep = coreset_greedy(&fused, cfg.rate, cfg.seed)?;
    let bank = MemoryBank::new(fused.select(&keep), params, Some(fused.rows))?;
    Ok((bank, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_rows(rng: &mut impl Rng, n: usize, d: usize) -> FeatureMatrix {
        FeatureMatrix::new(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(), FeatureLevel::Local).unwrap()
    }

    #[test]
    fn params_examples_and_oracle() {
        let f = FeatureMatrix::new(1, 2, vec![0.0, 2.0], FeatureLevel::Local).unwrap();
        let p = norm_params(&f, &[Vec3::new(0.6, 0.8, 0.0)]).unwrap();
        assert_eq!(p.gamma_f, 2.0);
        assert!((p.gamma_c - 1.0).abs() < 1e-9);
        let zero = FeatureMatrix::zeros(3, 2, FeatureLevel::Local);
        assert_eq!(norm_params(&zero, &[Vec3::zeros()]).unwrap(), NormalizationParams { gamma_f: 1.0, gamma_c: 1.0 });
        assert!(norm_params(&FeatureMatrix::zeros(0, 2, FeatureLevel::Local), &[Vec3::zeros()]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.gen_range(1..40);
            let f = random_rows(&mut rng, n, 5);
            let c: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
            let p = norm_params(&f, &c).unwrap();
            let mut of = 0.0f64;
            for i in 0..n {
                of = of.max(f.row(i).iter().map(|v| v * v).sum::<f64>().sqrt());
            }
            let oc = c.iter().map(|v| (v.x * v.x + v.y * v.y + v.z * v.z).sqrt()).fold(0.0, f64::max);
            assert!((p.gamma_f - of).abs() < 1e-12 && (p.gamma_c - oc).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_examples_and_oracle() {
        let f = FeatureMatrix::new(1, 2, vec![1.0, 2.0], FeatureLevel::Local).unwrap();
        let c = [Vec3::new(3.0, 4.0, 5.0)];
        let unit = NormalizationParams { gamma_f: 1.0, gamma_c: 1.0 };
        assert_eq!(fuse(&f, &c, &unit).unwrap().data, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let zero = FeatureMatrix::zeros(1, 2, FeatureLevel::Local);
        let p = NormalizationParams { gamma_f: 2.0, gamma_c: 2.0 };
        assert_eq!(fuse(&zero, &c, &p).unwrap().data, vec![0.0, 0.0, 1.5, 2.0, 2.5]);
        assert!(fuse(&f, &[], &unit).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = rng.gen_range(1..20);
            let f = random_rows(&mut rng, n, 4);
            let c: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
            let p = NormalizationParams { gamma_f: rng.gen_range(0.5..3.0), gamma_c: rng.gen_range(0.5..3.0) };
            let fused = fuse(&f, &c, &p).unwrap();
            for i in 0..n {
                for k in 0..4 {
                    assert!((fused.row(i)[k] - f.row(i)[k] / p.gamma_f).abs() < 1e-12);
                }
                for k in 0..3 {
                    assert!((fused.row(i)[4 + k] - c[i][k] / p.gamma_c).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn coreset_full_rate_and_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = random_rows(&mut rng, 17, 3);
        let mut all = coreset_greedy(&rows, 1.0, 5).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..17).collect::<Vec<_>>());

        let square = FeatureMatrix::new(4, 2, vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0], FeatureLevel::Local).unwrap();
        for seed in 0..20 {
            let sel = coreset_greedy(&square, 0.5, seed).unwrap();
            assert_eq!(sel.len(), 2);
            assert_eq!((sel[0] + 2) % 4, sel[1]);
        }
        assert_eq!(coreset_greedy(&square, 0.01, 0).unwrap().len(), 1);
        assert!(coreset_greedy(&square, 0.0, 0).is_err());
        assert!(coreset_greedy(&square, 1.5, 0).is_err());
    }

    fn covering_radius(rows: &FeatureMatrix, centers: &[usize]) -> f64 {
        (0..rows.rows)
            .map(|i| centers.iter().map(|&c| sq_dist(rows.row(i), rows.row(c))).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
            .sqrt()
    }

    #[test]
    fn coreset_two_approximation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..60 {
            let n = rng.gen_range(2..=12);
            let d = rng.gen_range(1..4);
            let rows = random_rows(&mut rng, n, d);
            let m = rng.gen_range(1..=n);
            let rate = m as f64 / n as f64;
            let sel = coreset_greedy(&rows, rate, rng.gen()).unwrap();
            assert_eq!(sel.len(), m);
            let mut opt = f64::INFINITY;
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != m {
                    continue;
                }
                let centers: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
                opt = opt.min(covering_radius(&rows, &centers));
            }
            assert!(covering_radius(&rows, &sel) <= 2.0 * opt + 1e-12);
        }
    }

    #[test]
    fn nn_distance_examples_and_oracle() {
        let origin = MemoryBank::new(FeatureMatrix::zeros(1, 4, FeatureLevel::Local), NormalizationParams { gamma_f: 1.0, gamma_c: 1.0 }, None).unwrap();
        assert!((nn_distance(&origin, &[0.0, 3.0, 0.0, 0.0]).unwrap() - 3.0).abs() < 1e-15);
        assert!(nn_distance(&origin, &[0.0; 3]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let m = rng.gen_range(1..30);
            let entries = random_rows(&mut rng, m, 6);
            let bank = MemoryBank::new(entries.clone(), NormalizationParams { gamma_f: 1.0, gamma_c: 1.0 }, None).unwrap();
            assert_eq!(nn_distance(&bank, entries.row(0)).unwrap(), 0.0);
            let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut oracle = f64::INFINITY;
            for e in entries.iter_rows() {
                let mut s = 0.0;
                for k in 0..6 {
                    s += (e[k] - q[k]).powi(2);
                }
                oracle = oracle.min(s.sqrt());
            }
            assert!((nn_distance(&bank, &q).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn bank_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let entries = random_rows(&mut rng, 7, 5);
        let entries = FeatureMatrix::new(7, 5, entries.data.iter().map(|v| *v as f32 as f64).collect(), FeatureLevel::Local).unwrap();
        let bank = MemoryBank::new(entries, NormalizationParams { gamma_f: 0.5, gamma_c: 2.25 }, None).unwrap();
        let bytes = bank.to_bytes();
        assert_eq!(&bytes[..8], b"R2IBANK1");
        assert_eq!(MemoryBank::from_bytes(&bytes).unwrap(), bank);
        assert!(matches!(MemoryBank::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::UnexpectedEof)));
        assert!(matches!(MemoryBank::from_bytes(b"R2IFEAT1xxxxxxxxxxxxxxxx"), Err(Error::BadMagic(_))));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.bin");
        bank.save(&path).unwrap();
        assert_eq!(MemoryBank::load(&path).unwrap(), bank);
    }
}
