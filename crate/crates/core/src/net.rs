//! Lightweight PointNet-style encoder shared by all four Siamese branches.
//!
//! Per-point MLP `3 -> 64 -> 64` (ReLU), a global max-pool of the last
//! per-point features, the pooled vector concatenated back onto every point
//! (`128`), then a per-point head `128 -> 64 -> k` whose last layer is linear.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmat::{GradMap, Mat, NodeId, Tape};
use crate::error::{Error, Result};
use crate::fmap::Embedding;
use crate::geom::PointCloud;

/// Layer widths of the encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Per-point MLP widths, starting with the input width 3.
    pub point_widths: Vec<usize>,
    /// Head widths, starting with twice the last per-point width and ending
    /// with the embedding size.
    pub head_widths: Vec<usize>,
}

impl Architecture {
    pub fn for_embedding(k: usize) -> Self {
        Architecture {
            point_widths: vec![3, 64, 64],
            head_widths: vec![128, 64, k],
        }
    }

    pub fn k(&self) -> usize {
        *self.head_widths.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Contract(format!("architecture: {msg}")));
        if self.point_widths.len() < 2 || self.point_widths[0] != 3 {
            return bad(format!("point widths {:?} must start at 3", self.point_widths));
        }
        let local = *self.point_widths.last().unwrap();
        if self.head_widths.len() < 2 || self.head_widths[0] != 2 * local {
            return bad(format!(
                "head widths {:?} must start at {}",
                self.head_widths,
                2 * local
            ));
        }
        if self.k() < 2 {
            return bad(format!("embedding size {} is below 2", self.k()));
        }
        if self.point_widths.iter().chain(&self.head_widths).any(|&w| w == 0) {
            return bad("zero width".into());
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.point_widths
            .windows(2)
            .chain(self.head_widths.windows(2))
            .map(|w| (w[0], w[1]))
            .collect()
    }

    fn point_layers(&self) -> usize {
        self.point_widths.len() - 1
    }
}

/// One dense layer: `y = x W^T + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`.
    pub weight: Mat,
    /// `1 x out`.
    pub bias: Mat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub arch: Architecture,
    pub layers: Vec<Dense>,
}

/// Tape handles of the encoder parameters, `[w0, b0, w1, b1, ...]`.
#[derive(Clone, Debug)]
pub struct ParamNodes {
    nodes: Vec<NodeId>,
}

impl ParamNodes {
    /// Wraps handles already recorded in `[w0, b0, ...]` order.
    pub fn from_ids(nodes: Vec<NodeId>) -> Self {
        ParamNodes { nodes }
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.nodes
    }

    /// Gradients in parameter order, zeros where the root did not depend on
    /// a parameter.
    pub fn gradients(&self, tape: &Tape, grads: &GradMap) -> Vec<Mat> {
        self.nodes
            .iter()
            .map(|&id| grads.get_or_zeros(id, tape.value(id).shape()))
            .collect()
    }
}

/// Glorot-uniform weights, zero biases, deterministic in `seed`.
pub fn init_encoder(k: usize, seed: u64) -> Result<EncoderParams> {
    EncoderParams::init(Architecture::for_embedding(k), seed)
}

impl EncoderParams {
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weight: Mat::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-limit..=limit)),
                    bias: Mat::zeros(1, fan_out),
                }
            })
            .collect();
        Ok(EncoderParams { arch, layers })
    }

    pub fn k(&self) -> usize {
        self.arch.k()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.data().len())
            .sum()
    }

    /// Checks layer shapes against the architecture and finiteness.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let shapes = self.arch.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::dim(
                "encoder",
                format!("{} layers for {} described", self.layers.len(), shapes.len()),
            ));
        }
        for (i, ((fan_in, fan_out), l)) in shapes.iter().zip(&self.layers).enumerate() {
            if l.weight.shape() != (*fan_out, *fan_in) || l.bias.shape() != (1, *fan_out) {
                return Err(Error::dim(
                    "encoder",
                    format!("layer {i} does not match {fan_in}->{fan_out}"),
                ));
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::NonFinite {
                    op: format!("encoder layer {i}"),
                });
            }
        }
        Ok(())
    }

    /// Parameter tensors in `[w0, b0, w1, b1, ...]` order.
    pub fn tensors(&self) -> Vec<&Mat> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Records every parameter as a leaf so several encodes share them.
    pub fn register(&self, tape: &mut Tape) -> Result<ParamNodes> {
        let nodes = self
            .tensors()
            .into_iter()
            .map(|m| tape.leaf(m.clone()))
            .collect::<Result<_>>()?;
        Ok(ParamNodes { nodes })
    }

    /// Records the encoder applied to `cloud` using registered parameters.
    pub fn encode(&self, tape: &mut Tape, params: &ParamNodes, cloud: &PointCloud) -> Result<Embedding> {
        if params.nodes.len() != 2 * self.layers.len() {
            return Err(Error::dim("encode", "parameter handles do not match the encoder"));
        }
        for (i, (&id, m)) in params.nodes.iter().zip(self.tensors()).enumerate() {
            if tape.value(id).shape() != m.shape() {
                return Err(Error::dim(
                    "encode",
                    format!(
                        "parameter {i} is {:?}, expected {:?}",
                        tape.value(id).shape(),
                        m.shape()
                    ),
                ));
            }
        }
        let n = cloud.len();
        let x = tape.constant(cloud.coords().clone())?;
        let dense = |tape: &mut Tape, h: NodeId, layer: usize, relu: bool| -> Result<NodeId> {
            let z = tape.matmul_nt(h, params.nodes[2 * layer])?;
            let z = tape.add_row(z, params.nodes[2 * layer + 1])?;
            if relu {
                tape.relu(z)
            } else {
                Ok(z)
            }
        };
        let point_layers = self.arch.point_layers();
        let mut h = x;
        for layer in 0..point_layers {
            h = dense(tape, h, layer, true)?;
        }
        let pooled = tape.max_pool_rows(h)?;
        let global = tape.broadcast_rows(pooled, n)?;
        h = tape.concat_cols(h, global)?;
        let total = self.layers.len();
        for layer in point_layers..total {
            h = dense(tape, h, layer, layer + 1 < total)?;
        }
        Ok(Embedding(h))
    }

    /// Forward pass only; returns the `n x k` embedding.
    pub fn embed(&self, cloud: &PointCloud) -> Result<Mat> {
        let mut tape = Tape::new();
        let nodes = self
            .tensors()
            .into_iter()
            .map(|m| tape.constant(m.clone()))
            .collect::<Result<_>>()?;
        let e = self.encode(&mut tape, &ParamNodes { nodes }, cloud)?;
        Ok(tape.value(e.0).clone())
    }
}
