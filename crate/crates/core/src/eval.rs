//! Nearest-neighbour matching in embedding space and geodesic error reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffmat::Mat;
use crate::error::{Error, Result};
use crate::fmap::nn_correspondence;
use crate::geom::{geodesics, GeodesicField, IndexMap, PointCloud, ShapePairSample};
use crate::net::EncoderParams;
use crate::train::{fit, FitOptions, TrainConfig};

/// Number of CDF samples in every report.
pub const CDF_POINTS: usize = 100;

pub const NORMALIZATION: &str = "geodesic_diameter";
pub const AGGREGATION: &str = "mean_of_pair_means";

/// Anything that maps a cloud to per-point descriptors.
pub trait PointEmbedder {
    fn embed(&self, cloud: &PointCloud) -> Result<Mat>;
    fn describe(&self) -> String;
}

impl PointEmbedder for EncoderParams {
    fn embed(&self, cloud: &PointCloud) -> Result<Mat> {
        EncoderParams::embed(self, cloud)
    }

    fn describe(&self) -> String {
        format!("encoder(k={})", self.k())
    }
}

/// Baseline that uses the coordinates themselves as a 3-d embedding.
#[derive(Clone, Copy, Debug, Default)]
pub struct RawCoordinates;

impl PointEmbedder for RawCoordinates {
    fn embed(&self, cloud: &PointCloud) -> Result<Mat> {
        Ok(cloud.coords().clone())
    }

    fn describe(&self) -> String {
        "raw_coordinates".into()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub checkpoint: String,
    pub dataset: String,
    pub normalization: String,
    pub aggregation: String,
}

/// Geodesic errors of one predicted map, normalized by the target diameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub errors: Vec<f64>,
    pub mean_x100: f64,
    /// `(threshold, fraction of errors <= threshold)`.
    pub cdf: Vec<(f64, f64)>,
    pub meta: ReportMeta,
}

/// Thresholds `j / 99` on `[0, 1]`; the last one is raised to the largest
/// error so the CDF always ends at 1.
fn cdf_of(errors: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let max = sorted.last().copied().unwrap_or(0.0);
    let n = sorted.len().max(1) as f64;
    (0..CDF_POINTS)
        .map(|j| {
            let mut t = j as f64 / (CDF_POINTS - 1) as f64;
            if j == CDF_POINTS - 1 {
                t = t.max(max);
            }
            let below = sorted.partition_point(|&e| e <= t);
            (t, below as f64 / n)
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl ErrorReport {
    fn from_errors(errors: Vec<f64>, meta: ReportMeta) -> Self {
        ErrorReport {
            mean_x100: 100.0 * mean(&errors),
            cdf: cdf_of(&errors),
            errors,
            meta,
        }
    }
}

/// `error_i = d_geo(pred(i), gt(i)) / diameter`, distances on the target.
pub fn evaluate_pair(pred: &IndexMap, gt: &IndexMap, geo: &GeodesicField) -> Result<ErrorReport> {
    if pred.src_size() != gt.src_size() {
        return Err(Error::Size(format!(
            "predicted map has {} sources, ground truth {}",
            pred.src_size(),
            gt.src_size()
        )));
    }
    if pred.dst_size() != geo.len() || gt.dst_size() != geo.len() {
        return Err(Error::Size(format!(
            "maps point into {} and {} targets but the geodesic field has {} points",
            pred.dst_size(),
            gt.dst_size(),
            geo.len()
        )));
    }
    let diameter = geo.diameter();
    if !(diameter > 0.0) {
        return Err(Error::Degenerate("target has zero geodesic diameter".into()));
    }
    let errors = (0..pred.src_size())
        .map(|i| geo.distance(gt.get(i), pred.get(i)) / diameter)
        .collect();
    Ok(ErrorReport::from_errors(
        errors,
        ReportMeta {
            normalization: NORMALIZATION.into(),
            ..ReportMeta::default()
        },
    ))
}

/// Embeds both full clouds, matches by nearest neighbour, and scores the
/// result against `pair.map_xy`.
pub fn match_and_evaluate(
    embedder: &dyn PointEmbedder,
    pair: &ShapePairSample,
    geo: &GeodesicField,
) -> Result<(IndexMap, ErrorReport)> {
    pair.validate()?;
    let pred = predict_map(embedder, &pair.x, &pair.y)?;
    let mut report = evaluate_pair(&pred, &pair.map_xy, geo)?;
    report.meta.checkpoint = embedder.describe();
    Ok((pred, report))
}

/// Nearest neighbour in embedding space for every point of `source`.
pub fn predict_map(embedder: &dyn PointEmbedder, source: &PointCloud, target: &PointCloud) -> Result<IndexMap> {
    let ex = embedder.embed(source)?;
    let ey = embedder.embed(target)?;
    nn_correspondence(&ex, &ey)
}

/// Held-out pairs with precomputed geodesics on each target.
pub struct TestSuite {
    pub name: String,
    pub pairs: Vec<ShapePairSample>,
    fields: Vec<GeodesicField>,
}

impl TestSuite {
    pub fn new(name: impl Into<String>, pairs: Vec<ShapePairSample>, knn: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Contract("test suite has no pairs".into()));
        }
        let fields = pairs.iter().map(|p| geodesics(&p.y, knn)).collect::<Result<_>>()?;
        Ok(TestSuite {
            name: name.into(),
            pairs,
            fields,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn field(&self, i: usize) -> &GeodesicField {
        &self.fields[i]
    }
}

/// Per-pair reports plus their aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    /// Mean of the per-pair `mean_x100` values.
    pub mean_x100: f64,
    /// CDF of all per-point errors pooled over pairs.
    pub cdf: Vec<(f64, f64)>,
    pub pair_means_x100: Vec<f64>,
    pub meta: ReportMeta,
}

pub fn evaluate_suite(embedder: &dyn PointEmbedder, suite: &TestSuite) -> Result<(SuiteReport, Vec<IndexMap>)> {
    let mut pooled = Vec::new();
    let mut means = Vec::with_capacity(suite.len());
    let mut maps = Vec::with_capacity(suite.len());
    for (i, pair) in suite.pairs.iter().enumerate() {
        let (pred, r) = match_and_evaluate(embedder, pair, suite.field(i))?;
        means.push(r.mean_x100);
        pooled.extend(r.errors);
        maps.push(pred);
    }
    Ok((
        SuiteReport {
            mean_x100: mean(&means),
            cdf: cdf_of(&pooled),
            pair_means_x100: means,
            meta: ReportMeta {
                checkpoint: embedder.describe(),
                dataset: suite.name.clone(),
                normalization: NORMALIZATION.into(),
                aggregation: AGGREGATION.into(),
            },
        },
        maps,
    ))
}

pub fn write_suite_json(path: &Path, r: &SuiteReport) -> Result<()> {
    let text = serde_json::to_string_pretty(r).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// `threshold,cdf` rows followed by a `mean_x100,<value>` summary row.
pub fn format_suite_csv(r: &SuiteReport) -> String {
    let mut out = String::from("threshold,cdf\n");
    for (t, c) in &r.cdf {
        let _ = writeln!(out, "{t},{c}");
    }
    let _ = writeln!(out, "mean_x100,{}", r.mean_x100);
    out
}

pub fn write_suite_csv(path: &Path, r: &SuiteReport) -> Result<()> {
    fs::write(path, format_suite_csv(r)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    EmbeddingSize,
    TrainSize,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding_size" | "k" => Ok(SweepAxis::EmbeddingSize),
            "train_size" | "pairs" => Ok(SweepAxis::TrainSize),
            other => Err(Error::Contract(format!(
                "unknown sweep axis '{other}' (embedding_size|train_size)"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::EmbeddingSize => "embedding_size",
            SweepAxis::TrainSize => "train_size",
        }
    }

    pub fn apply(self, base: &TrainConfig, value: usize) -> TrainConfig {
        match self {
            SweepAxis::EmbeddingSize => TrainConfig {
                k: value,
                ..base.clone()
            },
            SweepAxis::TrainSize => TrainConfig {
                pairs: Some(value),
                ..base.clone()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub mean_x100: f64,
}

/// Trains one model per value and evaluates each on `suite`.
pub fn sweep(
    axis: SweepAxis,
    values: &[usize],
    base: &TrainConfig,
    train: &[ShapePairSample],
    suite: &TestSuite,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Contract("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&v| {
            let cfg = axis.apply(base, v);
            let (ckpt, _) = fit(&cfg, train, FitOptions::default())?;
            let (r, _) = evaluate_suite(&ckpt.params, suite)?;
            Ok(SweepRow {
                value: v,
                mean_x100: r.mean_x100,
            })
        })
        .collect()
}

pub fn format_sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut out = format!("{},mean_x100\n", axis.name());
    for r in rows {
        let _ = writeln!(out, "{},{}", r.value, r.mean_x100);
    }
    out
}
