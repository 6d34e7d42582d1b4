//! Training options from flags, an optional JSON file, and defaults, in that
//! order of precedence.

use std::fs;
use std::path::Path;

use anyhow::Result;
use clap::Args;
use serde::Deserialize;

use canon_core::train::{Mode, TrainConfig};

/// An error in how the program was invoked; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Training flags; every one may also be set in the config file under the
/// same name (with underscores).
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    /// Loss weight preset: full or partial matching
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Embedding size
    #[arg(long)]
    pub k: Option<usize>,
    /// Points sampled per shape in each training sample
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Weight of the self-symmetry term (default from --mode)
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Weight of the commutativity term (default from --mode)
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Ridge of the self-symmetry solve
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use only the first N training pairs (default: all)
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Random rotation augmentation (true/false)
    #[arg(long, action = clap::ArgAction::Set, value_name = "BOOL")]
    pub rotate: Option<bool>,
    /// Largest yaw of the rotation augmentation, in degrees (180 = any)
    #[arg(long)]
    pub max_yaw_deg: Option<f64>,
}

impl TrainOptions {
    /// Values set here win over `other`.
    fn or(self, other: TrainOptions) -> TrainOptions {
        TrainOptions {
            mode: self.mode.or(other.mode),
            k: self.k.or(other.k),
            points: self.points.or(other.points),
            batch_size: self.batch_size.or(other.batch_size),
            lr: self.lr.or(other.lr),
            epochs: self.epochs.or(other.epochs),
            lambda: self.lambda.or(other.lambda),
            gamma: self.gamma.or(other.gamma),
            eps: self.eps.or(other.eps),
            seed: self.seed.or(other.seed),
            pairs: self.pairs.or(other.pairs),
            rotate: self.rotate.or(other.rotate),
            max_yaw_deg: self.max_yaw_deg.or(other.max_yaw_deg),
        }
    }

    fn into_config(self) -> TrainConfig {
        let mode = self.mode.unwrap_or(Mode::Full);
        let d = TrainConfig {
            pairs: None,
            ..TrainConfig::desk(mode)
        };
        TrainConfig {
            k: self.k.unwrap_or(d.k),
            points_per_shape: self.points.unwrap_or(d.points_per_shape),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            epochs: self.epochs.unwrap_or(d.epochs),
            lambda: self.lambda.unwrap_or(d.lambda),
            gamma: self.gamma.unwrap_or(d.gamma),
            eps: self.eps.unwrap_or(d.eps),
            seed: self.seed.unwrap_or(d.seed),
            mode,
            pairs: self.pairs.or(d.pairs),
            rotate: self.rotate.unwrap_or(d.rotate),
            max_yaw_deg: self.max_yaw_deg.unwrap_or(d.max_yaw_deg),
        }
    }
}

/// Flags over the config file over the desk defaults of the chosen mode.
pub fn resolve(flags: TrainOptions, file: Option<&Path>) -> Result<TrainConfig> {
    let from_file = match file {
        None => TrainOptions::default(),
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())))?
        }
    };
    let cfg = flags.or(from_file).into_config();
    cfg.validate().map_err(|e| Usage(e.to_string()))?;
    Ok(cfg)
}
