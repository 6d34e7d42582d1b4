//! Optimization loop: per-sample subsampling and augmentation, batched
//! gradients, Adam updates, checkpoints, and the training log.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmat::{Mat, Tape};
use crate::error::{Error, Result};
use crate::fmap::DEFAULT_RIDGE_EPS;
use crate::geom::{random_rotation_within, subsample, ShapePairSample};
use crate::loss::{pair_objective, LossBreakdown, LossWeights};
use crate::net::{Architecture, Dense, EncoderParams};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Checkpoint format version written by [`save_checkpoint`].
pub const CHECKPOINT_VERSION: u32 = 1;

pub const LOG_HEADER: &str = "iter,l_euc,l_lin,l_comm,l_total,wall_ms";

/// Full or partial shape matching; selects the default loss weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Full,
    Partial,
}

impl Mode {
    pub fn default_weights(self) -> LossWeights {
        match self {
            Mode::Full => LossWeights::FULL,
            Mode::Partial => LossWeights::PARTIAL,
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Mode::Full),
            "partial" => Ok(Mode::Partial),
            other => Err(Error::Contract(format!("unknown mode '{other}' (full|partial)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Embedding size.
    pub k: usize,
    /// Points sampled per shape for every training sample.
    pub points_per_shape: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub lambda: f64,
    pub gamma: f64,
    /// Ridge added to the self-symmetry solve.
    pub eps: f64,
    pub seed: u64,
    pub mode: Mode,
    /// Number of training pairs taken from the front of the dataset; all
    /// pairs when unset.
    pub pairs: Option<usize>,
    /// Random rotation of each shape in every sample.
    pub rotate: bool,
    /// Yaw range of the rotation augmentation in degrees; 180 is the full
    /// circle.
    pub max_yaw_deg: f64,
}

impl TrainConfig {
    /// Small configuration that trains in minutes on one CPU core.
    pub fn desk(mode: Mode) -> Self {
        let w = mode.default_weights();
        TrainConfig {
            k: 24,
            points_per_shape: 256,
            batch_size: 8,
            learning_rate: 1e-3,
            epochs: 30,
            lambda: w.lambda,
            gamma: w.gamma,
            eps: DEFAULT_RIDGE_EPS,
            seed: 0,
            mode,
            pairs: Some(200),
            rotate: true,
            // full-circle yaw does not fit in the desk budget
            max_yaw_deg: 30.0,
        }
    }

    /// Full-scale settings: k 50, 3000 points, batch 20, lr 1e-4.
    pub fn full_scale(mode: Mode) -> Self {
        TrainConfig {
            k: 50,
            points_per_shape: 3000,
            batch_size: 20,
            learning_rate: 1e-4,
            pairs: None,
            max_yaw_deg: 180.0,
            ..TrainConfig::desk(mode)
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Contract(format!("train config: {msg}")));
        if self.k < 2 {
            return bad(format!("k = {} must be at least 2", self.k));
        }
        if self.points_per_shape < crate::geom::MIN_POINTS {
            return bad(format!("points_per_shape = {} is too small", self.points_per_shape));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate = {} must be positive", self.learning_rate));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad(format!("eps = {} must be non-negative", self.eps));
        }
        if !(self.max_yaw_deg >= 0.0) {
            return bad(format!("max_yaw_deg = {} must be non-negative", self.max_yaw_deg));
        }
        if self.pairs == Some(0) {
            return bad("pairs must be positive".into());
        }
        self.weights().validate()
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: u64,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        AdamState {
            m: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            t: 0,
        }
    }

    pub fn for_params(params: &EncoderParams) -> Self {
        let shapes: Vec<_> = params.tensors().iter().map(|m| m.shape()).collect();
        AdamState::new(&shapes)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [&mut Mat], grads: &[Mat], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(
            "adam_step",
            format!(
                "{} params, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::dim(
                "adam_step",
                format!("tensor {i}: param {:?}, gradient {:?}", p.shape(), g.shape()),
            ));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, &gj) in m.iter_mut().zip(g) {
            *mj = ADAM_BETA1 * *mj + (1.0 - ADAM_BETA1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, &gj) in v.iter_mut().zip(g) {
            *vj = ADAM_BETA2 * *vj + (1.0 - ADAM_BETA2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((w, &mj), &vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            *w -= lr * (mj / c1) / ((vj / c2).sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// One row of the training log; losses are batch means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iter: u64,
    pub loss: LossBreakdown,
    /// Milliseconds since training started; 0 unless timing is enabled.
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub config: TrainConfig,
    /// Adam steps taken.
    pub iteration: u64,
    /// Seed, stream, and word position of the training RNG after the last
    /// step.
    pub rng_digest: String,
}

fn rng_digest(rng: &ChaCha8Rng) -> String {
    format!(
        "{:016x}:{:x}:{:032x}",
        u64::from_le_bytes(rng.get_seed()[..8].try_into().unwrap()),
        rng.get_stream(),
        rng.get_word_pos()
    )
}

/// Stateful trainer; [`fit`] drives it over whole epochs.
pub struct Trainer {
    config: TrainConfig,
    params: EncoderParams,
    adam: AdamState,
    rng: ChaCha8Rng,
    started: Option<Instant>,
}

impl Trainer {
    /// Encoder initialised from `config.seed`; the sampling RNG uses a
    /// separate stream of the same seed.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = EncoderParams::init(Architecture::for_embedding(config.k), config.seed)?;
        let adam = AdamState::for_params(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Trainer {
            config,
            params,
            adam,
            rng,
            started: None,
        })
    }

    /// Fills `wall_ms` in log rows from now on.
    pub fn enable_timing(&mut self) {
        self.started = Some(Instant::now());
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            config: self.config.clone(),
            iteration: self.adam.steps(),
            rng_digest: rng_digest(&self.rng),
        }
    }

    /// Gradients and losses of one sample after subsampling and rotation.
    fn sample_gradients(&mut self, sample: &ShapePairSample, index: usize) -> Result<(Vec<Mat>, LossBreakdown)> {
        let sub_seed = self.rng.gen();
        let (rx, ry): (u64, u64) = (self.rng.gen(), self.rng.gen());
        let q = self.config.points_per_shape;
        let mut s = subsample(sample, q, sub_seed).map_err(|e| in_sample(index, e))?;
        if self.config.rotate {
            let yaw = self.config.max_yaw_deg;
            s.x = s.x.rotated(&random_rotation_within(rx, yaw))?;
            s.y = s.y.rotated(&random_rotation_within(ry, yaw))?;
        }
        let mut tape = Tape::new();
        let nodes = self.params.register(&mut tape)?;
        let (root, loss) = pair_objective(
            &mut tape,
            &self.params,
            &nodes,
            &s,
            self.config.weights(),
            self.config.eps,
        )
        .map_err(|e| in_sample(index, e))?;
        let grads = tape.backward(root).map_err(|e| in_sample(index, e))?;
        Ok((nodes.gradients(&tape, &grads), loss))
    }

    /// One Adam step on the mean gradient of `batch` (indices into `data`).
    pub fn step(&mut self, data: &[ShapePairSample], batch: &[usize]) -> Result<LogRow> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let mut sum: Option<Vec<Mat>> = None;
        let mut loss = LossBreakdown::default();
        for &i in batch {
            let sample = data.get(i).ok_or(Error::Index {
                op: "train step",
                index: i,
                limit: data.len(),
            })?;
            let (g, l) = self.sample_gradients(sample, i)?;
            match &mut sum {
                None => sum = Some(g),
                Some(acc) => {
                    for (a, gi) in acc.iter_mut().zip(&g) {
                        a.add_assign(gi);
                    }
                }
            }
            loss.l_euc += l.l_euc;
            loss.l_lin += l.l_lin;
            loss.l_comm += l.l_comm;
            loss.l_total += l.l_total;
        }
        let inv = 1.0 / batch.len() as f64;
        let grads: Vec<Mat> = sum.unwrap_or_default().into_iter().map(|g| g.scale(inv)).collect();
        let mut tensors = self.params.tensors_mut();
        adam_step(&mut tensors, &grads, &mut self.adam, self.config.learning_rate)?;
        if !self.params.tensors().iter().all(|m| m.is_finite()) {
            return Err(Error::NonFinite {
                op: format!("Adam update at iteration {}", self.adam.steps()),
            });
        }
        Ok(LogRow {
            iter: self.adam.steps(),
            loss: LossBreakdown {
                l_euc: loss.l_euc * inv,
                l_lin: loss.l_lin * inv,
                l_comm: loss.l_comm * inv,
                l_total: loss.l_total * inv,
            },
            wall_ms: self.started.map_or(0, |t| t.elapsed().as_millis() as u64),
        })
    }

    /// One pass over `data` in a shuffled order, split into consecutive
    /// batches (the last may be short).
    pub fn epoch(&mut self, data: &[ShapePairSample]) -> Result<Vec<LogRow>> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.config.batch_size)
            .map(|batch| self.step(data, batch))
            .collect()
    }
}

fn in_sample(index: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::NonFinite {
            op: format!("training sample {index}: {op}"),
        },
        Error::Singular { solve, pivot } => Error::Singular {
            solve: format!("training sample {index}: {solve}"),
            pivot,
        },
        other => other,
    }
}

/// Options that do not affect the trained parameters.
#[derive(Clone, Copy, Debug, Default)]
pub struct FitOptions {
    /// Record wall-clock milliseconds in the log (makes logs
    /// non-reproducible).
    pub timing: bool,
}

/// Trains for `config.epochs` epochs on the first `config.pairs` samples.
pub fn fit(config: &TrainConfig, data: &[ShapePairSample], opts: FitOptions) -> Result<(Checkpoint, Vec<LogRow>)> {
    let mut trainer = Trainer::new(config.clone())?;
    let data = training_slice(config, data)?;
    if opts.timing {
        trainer.enable_timing();
    }
    let mut log = Vec::new();
    for _ in 0..config.epochs {
        log.extend(trainer.epoch(data)?);
    }
    Ok((trainer.checkpoint(), log))
}

fn training_slice<'a>(config: &TrainConfig, data: &'a [ShapePairSample]) -> Result<&'a [ShapePairSample]> {
    if data.is_empty() {
        return Err(Error::Contract("training dataset is empty".into()));
    }
    match config.pairs {
        None => Ok(data),
        Some(n) if n <= data.len() => Ok(&data[..n]),
        Some(n) => Err(Error::Size(format!(
            "config asks for {n} training pairs but the dataset has {}",
            data.len()
        ))),
    }
}

pub fn format_log(rows: &[LogRow]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iter, r.loss.l_euc, r.loss.l_lin, r.loss.l_comm, r.loss.l_total, r.wall_ms
        );
    }
    out
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    fs::write(path, format_log(rows)).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    index: usize,
    file: String,
    weight_shape: (usize, usize),
    bias_shape: (usize, usize),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    config: TrainConfig,
    architecture: Architecture,
    layers: Vec<LayerEntry>,
    iteration: u64,
    rng_digest: String,
}

/// `<dir>/<stem>.layer<i>.f64` next to the manifest at `path`.
fn layer_path(path: &Path, i: usize) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    path.with_file_name(format!("{stem}.layer{i}.f64"))
}

/// Writes a JSON manifest at `path` and one raw little-endian f64 file per
/// layer (weights row-major, then bias).
pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    c.params.validate()?;
    let mut layers = Vec::new();
    for (i, l) in c.params.layers.iter().enumerate() {
        let lp = layer_path(path, i);
        let mut bytes = Vec::with_capacity(8 * (l.weight.data().len() + l.bias.data().len()));
        for v in l.weight.data().iter().chain(l.bias.data()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&lp, bytes).map_err(|e| Error::io(&lp, e))?;
        layers.push(LayerEntry {
            index: i,
            file: lp.file_name().unwrap().to_string_lossy().into_owned(),
            weight_shape: l.weight.shape(),
            bias_shape: l.bias.shape(),
        });
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        config: c.config.clone(),
        architecture: c.params.arch.clone(),
        layers,
        iteration: c.iteration,
        rng_digest: c.rng_digest.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == CHECKPOINT_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Incompatible(format!(
                "{}: checkpoint version {v}, this build reads version {CHECKPOINT_VERSION}",
                path.display()
            )))
        }
        None => return Err(Error::parse(path, 1, "manifest has no version")),
    }
    let m: Manifest = serde_json::from_value(value).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let shapes = m.architecture.layer_shapes();
    if shapes.len() != m.layers.len() {
        return Err(Error::parse(
            path,
            0,
            format!("{} layer entries for {} layers", m.layers.len(), shapes.len()),
        ));
    }
    let mut layers = Vec::with_capacity(m.layers.len());
    for (entry, &(fan_in, fan_out)) in m.layers.iter().zip(&shapes) {
        if entry.weight_shape != (fan_out, fan_in) || entry.bias_shape != (1, fan_out) {
            return Err(Error::parse(
                path,
                0,
                format!("layer {} shape disagrees with architecture", entry.index),
            ));
        }
        let lp = path.with_file_name(&entry.file);
        let bytes = fs::read(&lp).map_err(|e| Error::io(&lp, e))?;
        let (nw, nb) = (fan_in * fan_out, fan_out);
        if bytes.len() != 8 * (nw + nb) {
            return Err(Error::parse(
                &lp,
                0,
                format!("expected {} bytes, found {}", 8 * (nw + nb), bytes.len()),
            ));
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        layers.push(Dense {
            weight: Mat::new(fan_out, fan_in, vals[..nw].to_vec())?,
            bias: Mat::new(1, fan_out, vals[nw..].to_vec())?,
        });
    }
    let params = EncoderParams {
        arch: m.architecture,
        layers,
    };
    params.validate()?;
    if params.k() != m.config.k {
        return Err(Error::Incompatible(format!(
            "{}: encoder has k = {} but the config says {}",
            path.display(),
            params.k(),
            m.config.k
        )));
    }
    Ok(Checkpoint {
        params,
        config: m.config,
        iteration: m.iteration,
        rng_digest: m.rng_digest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{gen_pair, Partiality};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            k: 6,
            points_per_shape: 32,
            batch_size: 2,
            epochs: 1,
            pairs: None,
            ..TrainConfig::desk(Mode::Full)
        }
    }

    fn dataset(n: usize) -> Vec<ShapePairSample> {
        (0..n as u64)
            .map(|i| {
                gen_pair(i, (2 * i, 2 * i + 1), 200, Partiality::None, i)
                    .unwrap()
                    .sample
            })
            .collect()
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut a = Mat::from_fn(2, 3, |r, c| (r * 3 + c) as f64);
        let before = a.clone();
        let mut st = AdamState::new(&[(2, 3)]);
        for _ in 0..3 {
            adam_step(&mut [&mut a], &[Mat::zeros(2, 3)], &mut st, 0.1).unwrap();
        }
        assert_eq!(a, before);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let g = Mat::from_rows(&[[0.5, -2.0, 1e-3, -7.0]]).unwrap();
        let mut a = Mat::zeros(1, 4);
        let mut st = AdamState::new(&[(1, 4)]);
        let lr = 1e-3;
        adam_step(&mut [&mut a], std::slice::from_ref(&g), &mut st, lr).unwrap();
        for (w, gj) in a.data().iter().zip(g.data()) {
            // |g| / (|g| + eps) = 1 up to eps / |g|
            assert!((w + lr * gj.signum()).abs() <= lr * ADAM_EPS / gj.abs() * 1.01 + 1e-18);
        }
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut a = Mat::zeros(2, 2);
        let mut st = AdamState::new(&[(2, 2)]);
        assert!(adam_step(&mut [&mut a], &[Mat::zeros(2, 3)], &mut st, 0.1).is_err());
        assert!(adam_step(&mut [&mut a], &[], &mut st, 0.1).is_err());
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut a = Mat::from_fn(3, 3, |r, c| (r as f64 - c as f64) * 0.1);
            let mut st = AdamState::new(&[(3, 3)]);
            for t in 0..20 {
                let g = a.map(|v| v * v - 0.01 * t as f64);
                adam_step(&mut [&mut a], &[g], &mut st, 0.05).unwrap();
            }
            a
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation_and_presets() {
        let d = TrainConfig::desk(Mode::Full);
        assert_eq!((d.k, d.points_per_shape, d.batch_size, d.epochs), (24, 256, 8, 30));
        assert_eq!(d.weights(), LossWeights::FULL);
        assert_eq!(TrainConfig::desk(Mode::Partial).weights(), LossWeights::PARTIAL);
        let p = TrainConfig::full_scale(Mode::Full);
        assert_eq!(
            (p.k, p.points_per_shape, p.batch_size, p.learning_rate),
            (50, 3000, 20, 1e-4)
        );
        for broken in [
            TrainConfig {
                batch_size: 0,
                ..d.clone()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..d.clone()
            },
            TrainConfig { k: 1, ..d.clone() },
            TrainConfig {
                lambda: -1.0,
                ..d.clone()
            },
            TrainConfig {
                pairs: Some(0),
                ..d.clone()
            },
        ] {
            assert!(broken.validate().is_err());
        }
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), d);
        assert_eq!("Partial".parse::<Mode>().unwrap(), Mode::Partial);
    }

    #[test]
    fn fit_is_deterministic_and_logs_every_step() {
        let data = dataset(5);
        let cfg = tiny_config();
        let (a, log_a) = fit(&cfg, &data, FitOptions::default()).unwrap();
        let (b, log_b) = fit(&cfg, &data, FitOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(format_log(&log_a), format_log(&log_b));
        // 5 samples in batches of 2
        assert_eq!(log_a.len(), 3);
        assert_eq!(a.iteration, 3);
        for r in &log_a {
            let w = cfg.weights();
            let l = r.loss;
            assert!((l.l_total - (l.l_euc + w.lambda * l.l_lin + w.gamma * l.l_comm)).abs() < 1e-9);
            assert_eq!(r.wall_ms, 0);
        }
        let (c, _) = fit(&TrainConfig { seed: 1, ..cfg }, &data, FitOptions::default()).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn fit_rejects_bad_datasets() {
        assert!(fit(&tiny_config(), &[], FitOptions::default()).is_err());
        let cfg = TrainConfig {
            pairs: Some(10),
            ..tiny_config()
        };
        assert!(matches!(
            fit(&cfg, &dataset(2), FitOptions::default()),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn overfits_a_single_pair() {
        let data = dataset(1);
        let cfg = TrainConfig {
            k: 8,
            points_per_shape: 64,
            batch_size: 1,
            rotate: false,
            ..tiny_config()
        };
        let mut t = Trainer::new(cfg).unwrap();
        let first = t.step(&data, &[0]).unwrap().loss.l_total;
        let mut last = first;
        for _ in 1..200 {
            last = t.step(&data, &[0]).unwrap().loss.l_total;
        }
        assert!(last <= 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (c, _) = fit(&tiny_config(), &dataset(2), FitOptions::default()).unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&path, &c).unwrap();
        assert!(dir.path().join("model.layer0.f64").exists());
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, c);
        for (x, y) in back.params.tensors().iter().zip(c.params.tensors()) {
            let bits = |m: &Mat| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(x), bits(y));
        }
        let cloud = dataset(1)[0].x.clone();
        assert_eq!(back.params.embed(&cloud).unwrap(), c.params.embed(&cloud).unwrap());
    }

    #[test]
    fn checkpoint_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (c, _) = fit(
            &TrainConfig {
                epochs: 0,
                ..tiny_config()
            },
            &dataset(1),
            FitOptions::default(),
        )
        .unwrap();
        assert_eq!(c.iteration, 0);
        let path = dir.path().join("m.json");
        save_checkpoint(&path, &c).unwrap();

        let layer = dir.path().join("m.layer2.f64");
        let bytes = fs::read(&layer).unwrap();
        fs::write(&layer, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Parse { .. })));
        fs::write(&layer, &bytes).unwrap();

        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("\"version\": 1", "\"version\": 99")).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Incompatible(_))));

        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn euclidean_only_training_matches_plain_euclidean_gradients() {
        // with lambda = gamma = 0 the symmetry terms are logged but inert
        let data = dataset(2);
        let cfg = TrainConfig {
            lambda: 0.0,
            gamma: 0.0,
            ..tiny_config()
        };
        let (_, log) = fit(&cfg, &data, FitOptions::default()).unwrap();
        assert!(log.iter().all(|r| r.loss.l_lin > 0.0 && r.loss.l_total == r.loss.l_euc));
    }
}
