//! Dense row-major feature matrices and their on-disk formats.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const FEATURE_MAGIC: &[u8; 8] = b"R2IFEAT1";
const HEADER_LEN: usize = 20;

/// Which cloud level a feature matrix describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureLevel {
    /// Per fine point, used for scoring and the local alignment loss.
    Local = 0,
    /// Per fine point, used for point-level assignment.
    Point = 1,
    /// Per coarse node.
    Patch = 2,
}

impl FeatureLevel {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(FeatureLevel::Local),
            1 => Ok(FeatureLevel::Point),
            2 => Ok(FeatureLevel::Patch),
            c => Err(Error::invalid(format!("unknown feature level code {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureLevel::Local => "local",
            FeatureLevel::Point => "point",
            FeatureLevel::Patch => "patch",
        }
    }

    pub fn parse(tok: &str) -> Result<Self> {
        match tok.trim() {
            "local" => Ok(FeatureLevel::Local),
            "point" => Ok(FeatureLevel::Point),
            "patch" => Ok(FeatureLevel::Patch),
            t => Self::from_code(t.parse().map_err(|_| Error::invalid(format!("bad feature level {t:?}")))?),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub level: FeatureLevel,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>, level: FeatureLevel) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::DimMismatch { expected: rows * dim, got: data.len() });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        Ok(FeatureMatrix { rows, dim, data, level })
    }

    pub fn zeros(rows: usize, dim: usize, level: FeatureLevel) -> Self {
        FeatureMatrix { rows, dim, data: vec![0.0; rows * dim], level }
    }

    pub fn from_rows(rows: &[Vec<f64>], level: FeatureLevel) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimMismatch { expected: dim, got: bad.len() });
        }
        Self::new(rows.len(), dim, rows.concat(), level)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.data[i * d..(i + 1) * d]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.rows)
    }

    /// Rows gathered by index, same level.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix { rows: indices.len(), dim: self.dim, data, level: self.level }
    }

    pub fn with_level(mut self, level: FeatureLevel) -> Self {
        self.level = level;
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.push(self.level.code());
        out.extend_from_slice(&[0u8; 3]);
        for v in &self.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::UnexpectedEof);
        }
        if &bytes[..8] != FEATURE_MAGIC {
            return Err(Error::BadMagic("feature file"));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::UnexpectedEof);
        }
        let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let level = FeatureLevel::from_code(bytes[16])?;
        let body = &bytes[HEADER_LEN..];
        let want = rows.checked_mul(dim).and_then(|n| n.checked_mul(4)).ok_or(Error::UnexpectedEof)?;
        if body.len() < want {
            return Err(Error::UnexpectedEof);
        }
        let data = body[..want].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Self::new(rows, dim, data, level)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("rows,dim,level\n{},{},{}\n", self.rows, self.dim, self.level.code());
        for row in self.iter_rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    /// CSV: a `rows,dim,level` line (optionally preceded by that literal
    /// header), then one comma-separated row per line.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut head = lines.next().ok_or(Error::UnexpectedEof)?;
        if head.replace(' ', "") == "rows,dim,level" {
            head = lines.next().ok_or(Error::UnexpectedEof)?;
        }
        let fields: Vec<&str> = head.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::BadMagic("feature CSV header"));
        }
        let rows: usize = fields[0].trim().parse().map_err(|_| Error::BadMagic("feature CSV header"))?;
        let dim: usize = fields[1].trim().parse().map_err(|_| Error::BadMagic("feature CSV header"))?;
        let level = FeatureLevel::parse(fields[2])?;
        let mut data = Vec::with_capacity(rows * dim);
        for _ in 0..rows {
            let line = lines.next().ok_or(Error::UnexpectedEof)?;
            let before = data.len();
            for tok in line.split(',') {
                data.push(tok.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad feature value {tok:?}")))?);
            }
            if data.len() - before != dim {
                return Err(Error::DimMismatch { expected: dim, got: data.len() - before });
            }
        }
        Self::new(rows, dim, data, level)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Writes binary unless the path ends in `.csv`.
pub fn write_features(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let result = if is_csv(path) { fs::write(path, features.to_csv()) } else { fs::write(path, features.to_bytes()) };
    result.map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Loads a feature file and checks it has one row per point of its cloud level.
pub fn load_features(path: &Path, expected_rows: usize) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let features = if is_csv(path) {
        FeatureMatrix::from_csv(std::str::from_utf8(&bytes).map_err(|_| Error::BadMagic("feature CSV"))?)?
    } else {
        FeatureMatrix::from_bytes(&bytes)?
    };
    if features.rows != expected_rows {
        return Err(Error::SizeMismatch { features: features.rows, points: expected_rows });
    }
    Ok(features)
}
