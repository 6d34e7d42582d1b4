//! On-disk dataset layout: per-pair XYZ clouds and map files plus a JSON
//! manifest.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use canon_core::geom::io::{load_cloud, load_map, save_cloud, save_map};
use canon_core::geom::{GeneratedPair, Partiality, ShapePairSample};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub pairs: usize,
    pub points: usize,
    pub partial: Partiality,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairFiles {
    pub x: String,
    pub y: String,
    pub map_xy: String,
    pub sym_x: String,
    pub sym_y: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub id: String,
    pub files: PairFiles,
    pub template_seed: u64,
    pub pose_seeds: (u64, u64),
    pub removed_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub generator: Generator,
    pub pairs: Vec<PairEntry>,
}

pub fn write_dataset(dir: &Path, generator: Generator, pairs: &[GeneratedPair]) -> Result<Manifest> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut entries = Vec::with_capacity(pairs.len());
    for (i, g) in pairs.iter().enumerate() {
        let id = format!("pair_{i:04}");
        let files = PairFiles {
            x: format!("{id}_x.xyz"),
            y: format!("{id}_y.xyz"),
            map_xy: format!("{id}_map_xy.map"),
            sym_x: format!("{id}_sym_x.map"),
            sym_y: format!("{id}_sym_y.map"),
        };
        let s = &g.sample;
        save_cloud(&dir.join(&files.x), &s.x)?;
        save_cloud(&dir.join(&files.y), &s.y)?;
        save_map(&dir.join(&files.map_xy), &s.map_xy)?;
        save_map(&dir.join(&files.sym_x), &s.sym_x)?;
        save_map(&dir.join(&files.sym_y), &s.sym_y)?;
        entries.push(PairEntry {
            id,
            files,
            template_seed: g.template_seed,
            pose_seeds: g.pose_seeds,
            removed_fraction: g.removed_fraction,
        });
    }
    let manifest = Manifest {
        generator,
        pairs: entries,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<ShapePairSample>)> {
    let manifest = read_manifest(dir)?;
    let mut pairs = Vec::with_capacity(manifest.pairs.len());
    for e in &manifest.pairs {
        let f = &e.files;
        let mut x = load_cloud(&dir.join(&f.x))?;
        let mut y = load_cloud(&dir.join(&f.y))?;
        x.set_label(format!("{}_x", e.id));
        y.set_label(format!("{}_y", e.id));
        let s = ShapePairSample {
            x,
            y,
            map_xy: load_map(&dir.join(&f.map_xy))?,
            sym_x: load_map(&dir.join(&f.sym_x))?,
            sym_y: load_map(&dir.join(&f.sym_y))?,
        };
        s.validate().with_context(|| format!("pair {}", e.id))?;
        pairs.push(s);
    }
    if pairs.is_empty() {
        anyhow::bail!(canon_core::Error::Contract(format!(
            "dataset {} has no pairs",
            dir.display()
        )));
    }
    Ok((manifest, pairs))
}
