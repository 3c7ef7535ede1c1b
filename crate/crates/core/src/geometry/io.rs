//! XYZ text and ASCII PLY readers/writers.

use super::{PointCloud, Vec3};
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Parses "x y z" or "x y z label" lines; `#` starts a comment.
pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut labeled: Option<bool> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let has_label = match fields.len() {
            3 => false,
            4 => true,
            n => return Err(parse_err(path, lineno + 1, format!("expected 3 or 4 fields, found {n}"))),
        };
        if *labeled.get_or_insert(has_label) != has_label {
            return Err(parse_err(path, lineno + 1, "inconsistent label column"));
        }
        let mut xyz = [0.0; 3];
        for (slot, tok) in xyz.iter_mut().zip(&fields) {
            *slot = tok.parse().map_err(|_| parse_err(path, lineno + 1, format!("bad number {tok:?}")))?;
        }
        points.push(Vec3::from(xyz));
        if has_label {
            labels.push(parse_label(fields[3]).ok_or_else(|| parse_err(path, lineno + 1, "label must be 0 or 1"))?);
        }
    }
    let cloud = PointCloud { points, labels: labeled.unwrap_or(false).then_some(labels) };
    cloud.validate()?;
    Ok(cloud)
}

fn parse_label(tok: &str) -> Option<u8> {
    match tok.parse::<f64>().ok()? {
        v if v == 0.0 => Some(0),
        v if v == 1.0 => Some(1),
        _ => None,
    }
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    parse_xyz(&read_text(path)?, path)
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 64);
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(out, "{:?} {:?} {:?}", p.x, p.y, p.z);
        if let Some(labels) = &cloud.labels {
            let _ = write!(out, " {}", labels[i]);
        }
        out.push('\n');
    }
    out
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_text(path, &format_xyz(cloud))
}

/// ASCII PLY with float x, y, z and an optional integer `label` property.
pub fn parse_ply(text: &str, path: &Path) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::BadMagic("PLY header")),
    }
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    for (lineno, line) in lines.by_ref() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(parse_err(path, lineno + 1, format!("unsupported PLY format {fmt}")));
            }
            ["element", "vertex", n] => {
                vertex_count = Some(n.parse::<usize>().map_err(|_| parse_err(path, lineno + 1, "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] if in_vertex => {
                return Err(parse_err(path, lineno + 1, "list properties on vertices are not supported"));
            }
            ["property", _ty, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let n = vertex_count.ok_or_else(|| parse_err(path, 0, "missing vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (xi, yi, zi) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(path, 0, "vertex needs x, y, z properties")),
    };
    let li = col("label");
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(if li.is_some() { n } else { 0 });
    for (lineno, line) in lines.take(n) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < props.len() {
            return Err(parse_err(path, lineno + 1, "short vertex row"));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|_| parse_err(path, lineno + 1, format!("bad number {:?}", fields[i])))
        };
        points.push(Vec3::new(num(xi)?, num(yi)?, num(zi)?));
        if let Some(li) = li {
            labels.push(parse_label(fields[li]).ok_or_else(|| parse_err(path, lineno + 1, "label must be 0 or 1"))?);
        }
    }
    if points.len() != n {
        return Err(Error::UnexpectedEof);
    }
    let cloud = PointCloud { points, labels: li.map(|_| labels) };
    cloud.validate()?;
    Ok(cloud)
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    parse_ply(&read_text(path)?, path)
}

fn ply_header(n: usize, labeled: bool, colored: bool) -> String {
    let mut h = format!("ply\nformat ascii 1.0\nelement vertex {n}\nproperty double x\nproperty double y\nproperty double z\n");
    if labeled {
        h.push_str("property uchar label\n");
    }
    if colored {
        h.push_str("property float score\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    h.push_str("end_header\n");
    h
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = ply_header(cloud.len(), cloud.labels.is_some(), false);
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(out, "{:?} {:?} {:?}", p.x, p.y, p.z);
        if let Some(l) = &cloud.labels {
            let _ = write!(out, " {}", l[i]);
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// PLY colored by min-max normalized score on a blue-to-red ramp.
pub fn write_ply_colored(path: &Path, cloud: &PointCloud, scores: &[f64]) -> Result<()> {
    if scores.len() != cloud.len() {
        return Err(Error::SizeMismatch { features: scores.len(), points: cloud.len() });
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = ply_header(cloud.len(), cloud.labels.is_some(), true);
    for (i, p) in cloud.points.iter().enumerate() {
        let t = ((scores[i] - lo) / span).clamp(0.0, 1.0);
        let [r, g, b] = heat(t);
        let _ = write!(out, "{:?} {:?} {:?}", p.x, p.y, p.z);
        if let Some(l) = &cloud.labels {
            let _ = write!(out, " {}", l[i]);
        }
        let _ = writeln!(out, " {} {r} {g} {b}", scores[i] as f32);
    }
    write_text(path, &out)
}

fn heat(t: f64) -> [u8; 3] {
    let r = (255.0 * (1.5 - (4.0 * t - 3.0).abs()).clamp(0.0, 1.0)) as u8;
    let g = (255.0 * (1.5 - (4.0 * t - 2.0).abs()).clamp(0.0, 1.0)) as u8;
    let b = (255.0 * (1.5 - (4.0 * t - 1.0).abs()).clamp(0.0, 1.0)) as u8;
    [r, g, b]
}

fn is_ply(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

/// Reads `.ply` as PLY and anything else as XYZ text.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    if is_ply(path) {
        read_ply(path)
    } else {
        read_xyz(path)
    }
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    if is_ply(path) {
        write_ply(path, cloud)
    } else {
        write_xyz(path, cloud)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xyz_comments_and_labels() {
        let text = "# header\n0 0 0 1\n1.5 2 -3 0 # trailing\n\n";
        let c = parse_xyz(text, Path::new("t.xyz")).unwrap();
        assert_eq!(c.points[1], Vec3::new(1.5, 2.0, -3.0));
        assert_eq!(c.labels, Some(vec![1, 0]));
        assert!(parse_xyz("0 0 0\n1 1 1 1\n", Path::new("t.xyz")).is_err());
        assert!(parse_xyz("0 0\n", Path::new("t.xyz")).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = PointCloud::with_labels(
            vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(-1.0 / 3.0, 4.0, 1e-7)],
            vec![0, 1],
        )
        .unwrap();
        for name in ["a.xyz", "a.ply"] {
            let path = dir.path().join(name);
            write_cloud(&path, &cloud).unwrap();
            assert_eq!(read_cloud(&path).unwrap(), cloud);
        }
        let path = dir.path().join("c.ply");
        write_ply_colored(&path, &cloud, &[0.0, 2.0]).unwrap();
        assert_eq!(read_ply(&path).unwrap(), cloud);
    }

    #[test]
    fn ply_int_label_and_truncation() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty int label\nend_header\n0 0 0 0\n1 1 1 1\n";
        let c = parse_ply(text, Path::new("x.ply")).unwrap();
        assert_eq!(c.labels, Some(vec![0, 1]));
        let short = text.replace("1 1 1 1\n", "");
        assert!(matches!(parse_ply(&short, Path::new("x.ply")), Err(Error::UnexpectedEof)));
    }
}
