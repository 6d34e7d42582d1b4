//! Plain-text XYZ, OFF, and index-map files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::diffmat::Mat;
use crate::error::{Error, Result};

use super::{IndexMap, PointCloud};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn label_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn is_off(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("off"))
}

/// Loads an XYZ or (by extension) OFF file.
pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let text = read(path)?;
    if is_off(path) {
        parse_off(&text, path)
    } else {
        parse_xyz(&text, path)
    }
}

/// Saves as OFF when the extension says so, XYZ otherwise.
pub fn save_cloud(path: &Path, p: &PointCloud) -> Result<()> {
    let text = if is_off(path) { format_off(p) } else { format_xyz(p) };
    write(path, &text)
}

fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut data = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = parse_floats(line, path, no + 1)?;
        if vals.len() != 3 {
            return Err(Error::parse(
                path,
                no + 1,
                format!("expected 3 values, found {}", vals.len()),
            ));
        }
        data.extend(vals);
    }
    let n = data.len() / 3;
    PointCloud::new(Mat::new(n, 3, data)?, label_of(path))
}

fn parse_floats(line: &str, path: &Path, no: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::parse(path, no, format!("'{tok}' is not a number")))
        })
        .collect()
}

fn parse_usizes(line: &str, path: &Path, no: usize) -> Result<Vec<usize>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| Error::parse(path, no, format!("'{tok}' is not an index")))
        })
        .collect()
}

fn format_xyz(p: &PointCloud) -> String {
    let mut out = String::new();
    for i in 0..p.len() {
        let [x, y, z] = p.point(i);
        let _ = writeln!(out, "{} {} {}", fmt_f64(x), fmt_f64(y), fmt_f64(z));
    }
    out
}

fn parse_off(text: &str, path: &Path) -> Result<PointCloud> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (no, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    if header != "OFF" {
        return Err(Error::parse(path, no, "missing OFF header"));
    }
    let (no, counts) = lines
        .next()
        .ok_or_else(|| Error::parse(path, no + 1, "missing counts line"))?;
    let counts = parse_usizes(counts, path, no)?;
    if counts.len() < 2 {
        return Err(Error::parse(path, no, "counts line needs vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);
    let mut data = Vec::with_capacity(nv * 3);
    for _ in 0..nv {
        let (no, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, no, "missing vertex line"))?;
        let vals = parse_floats(line, path, no)?;
        if vals.len() < 3 {
            return Err(Error::parse(path, no, "vertex line needs 3 coordinates"));
        }
        data.extend_from_slice(&vals[..3]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (no, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, no, "missing face line"))?;
        let idx = parse_usizes(line, path, no)?;
        if idx.len() != 4 || idx[0] != 3 {
            return Err(Error::parse(path, no, "only triangular faces '3 i j k' are supported"));
        }
        if let Some(&bad) = idx[1..].iter().find(|&&i| i >= nv) {
            return Err(Error::parse(path, no, format!("face index {bad} >= {nv}")));
        }
        faces.push([idx[1], idx[2], idx[3]]);
    }
    let coords = Mat::new(nv, 3, data)?;
    if faces.is_empty() {
        PointCloud::new(coords, label_of(path))
    } else {
        PointCloud::with_faces(coords, faces, label_of(path))
    }
}

fn format_off(p: &PointCloud) -> String {
    let faces = p.faces().unwrap_or(&[]);
    let mut out = format!("OFF\n{} {} 0\n", p.len(), faces.len());
    for i in 0..p.len() {
        let [x, y, z] = p.point(i);
        let _ = writeln!(out, "{} {} {}", fmt_f64(x), fmt_f64(y), fmt_f64(z));
    }
    for f in faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}

pub fn load_map(path: &Path) -> Result<IndexMap> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (no, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let header = parse_usizes(header, path, no)?;
    if header.len() != 2 {
        return Err(Error::parse(path, no, "header must be 'n_src n_dst'"));
    }
    let (n_src, n_dst) = (header[0], header[1]);
    let mut targets = Vec::with_capacity(n_src);
    for (no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let t: usize = line
            .parse()
            .map_err(|_| Error::parse(path, no, format!("'{line}' is not an index")))?;
        if t >= n_dst {
            return Err(Error::parse(path, no, format!("index {t} >= {n_dst}")));
        }
        targets.push(t);
    }
    if targets.len() != n_src {
        return Err(Error::parse(
            path,
            text.lines().count(),
            format!("expected {n_src} indices, found {}", targets.len()),
        ));
    }
    IndexMap::new(targets, n_dst)
}

pub fn save_map(path: &Path, m: &IndexMap) -> Result<()> {
    let mut out = format!("{} {}\n", m.src_size(), m.dst_size());
    for t in m.targets() {
        let _ = writeln!(out, "{t}");
    }
    write(path, &out)
}
