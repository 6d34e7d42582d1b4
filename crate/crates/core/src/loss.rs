//! Training losses: coordinate transfer through soft maps, the
//! linearly-invariant self-symmetry term, symmetry commutativity, and their
//! weighted sum.

use serde::{Deserialize, Serialize};

use crate::diffmat::{Mat, NodeId, Tape};
use crate::error::{Error, Result};
use crate::fmap::{self, Embedding, FMap, SoftMap};
use crate::geom::{flip, Axis, IndexMap, PointCloud, ShapePairSample};
use crate::net::{EncoderParams, ParamNodes};

/// Weights of the symmetry terms in the total loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub gamma: f64,
}

impl LossWeights {
    /// Full shape matching.
    pub const FULL: LossWeights = LossWeights {
        lambda: 5.0,
        gamma: 5.0,
    };
    /// Partial shape matching.
    pub const PARTIAL: LossWeights = LossWeights {
        lambda: 1.0,
        gamma: 0.1,
    };
    /// Euclidean term only.
    pub const EUCLIDEAN_ONLY: LossWeights = LossWeights {
        lambda: 0.0,
        gamma: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::Contract(format!(
                "loss weights must be non-negative, got lambda={} gamma={}",
                self.lambda, self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_euc: f64,
    pub l_lin: f64,
    pub l_comm: f64,
    pub l_total: f64,
}

/// Scalar nodes of the three loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub euc: NodeId,
    pub lin: NodeId,
    pub comm: NodeId,
}

/// Output of the self-symmetry term for one shape.
#[derive(Clone, Copy, Debug)]
pub struct SymmetryTerm {
    pub loss: NodeId,
    /// `S_XXf`, built from the C-transformed embedding.
    pub soft_map: SoftMap,
    pub fmap: FMap,
}

/// Mean over points of `||(S P)_i - P_{T(i)}||^2`.
fn transfer_error(tape: &mut Tape, s: SoftMap, p: &Mat, truth: &IndexMap) -> Result<NodeId> {
    let (rows, cols) = tape.value(s.0).shape();
    if cols != p.rows() || truth.src_size() != rows || truth.dst_size() != p.rows() {
        return Err(Error::dim(
            "coordinate transfer",
            format!(
                "soft map {rows}x{cols}, coordinates {}x{}, ground truth {truth}",
                p.rows(),
                p.cols()
            ),
        ));
    }
    let coords = tape.constant(p.clone())?;
    let moved = tape.matmul(s.0, coords)?;
    let target = tape.constant(p.select_rows(truth.targets())?)?;
    let diff = tape.sub(moved, target)?;
    let total = tape.sum_squares(diff)?;
    tape.scale(total, 1.0 / rows as f64)
}

/// Self-symmetry term for one shape: solve `C` from the ground-truth
/// symmetry, move `phi` by `C^T`, and score how well the resulting soft map
/// transfers the flipped coordinates `p_f`.
pub fn loss_lin(
    tape: &mut Tape,
    phi: Embedding,
    phi_f: Embedding,
    sym: &IndexMap,
    p_f: &Mat,
    eps: f64,
) -> Result<SymmetryTerm> {
    let c = fmap::self_symmetry_fmap(tape, phi, phi_f, sym, eps)?;
    let moved = fmap::transform_embedding(tape, phi, c)?;
    let s = fmap::soft_correspondence(tape, moved, phi_f)?;
    let loss = transfer_error(tape, s, p_f, sym)?;
    Ok(SymmetryTerm {
        loss,
        soft_map: s,
        fmap: c,
    })
}

/// Euclidean term: soft map straight from the raw embeddings, scored on the
/// coordinates `p_y` of the target.
pub fn loss_euc(
    tape: &mut Tape,
    phi_x: Embedding,
    phi_y: Embedding,
    map_xy: &IndexMap,
    p_y: &Mat,
) -> Result<(NodeId, SoftMap)> {
    let nx = tape.value(phi_x.0).rows();
    if map_xy.src_size() != nx {
        return Err(Error::dim("loss_euc", format!("map {map_xy} for {nx} source points")));
    }
    let s = fmap::soft_correspondence(tape, phi_x, phi_y)?;
    Ok((transfer_error(tape, s, p_y, map_xy)?, s))
}

/// `||S_XY S_YYf - S_XXf S_XY||_F / sqrt(n_x n_y)`.
pub fn loss_comm(tape: &mut Tape, s_xy: SoftMap, s_xxf: SoftMap, s_yyf: SoftMap) -> Result<NodeId> {
    let (nx, ny) = tape.value(s_xy.0).shape();
    if tape.value(s_xxf.0).shape() != (nx, nx) || tape.value(s_yyf.0).shape() != (ny, ny) {
        return Err(Error::dim(
            "loss_comm",
            format!("S_XY is {nx}x{ny} but the symmetry maps do not match"),
        ));
    }
    let map_then_sym = tape.matmul(s_xy.0, s_yyf.0)?;
    let sym_then_map = tape.matmul(s_xxf.0, s_xy.0)?;
    let diff = tape.sub(map_then_sym, sym_then_map)?;
    let norm = tape.frobenius_norm(diff)?;
    tape.scale(norm, 1.0 / ((nx * ny) as f64).sqrt())
}

/// `l_euc + lambda l_lin + gamma l_comm`.
pub fn loss_total(tape: &mut Tape, parts: LossParts, w: LossWeights) -> Result<(NodeId, LossBreakdown)> {
    w.validate()?;
    let lin = tape.scale(parts.lin, w.lambda)?;
    let comm = tape.scale(parts.comm, w.gamma)?;
    let partial = tape.add(parts.euc, lin)?;
    let total = tape.add(partial, comm)?;
    let breakdown = LossBreakdown {
        l_euc: tape.scalar(parts.euc),
        l_lin: tape.scalar(parts.lin),
        l_comm: tape.scalar(parts.comm),
        l_total: tape.scalar(total),
    };
    Ok((total, breakdown))
}

fn in_term<T>(term: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite { op } => Error::NonFinite {
            op: format!("{term} ({op})"),
        },
        other => other,
    })
}

/// Records the full objective for one (already augmented) pair: flip both
/// shapes, encode all four clouds with shared parameters, and combine the
/// loss terms. The self-symmetry term is summed over X and Y.
pub fn pair_objective(
    tape: &mut Tape,
    params: &EncoderParams,
    nodes: &ParamNodes,
    sample: &ShapePairSample,
    weights: LossWeights,
    eps: f64,
) -> Result<(NodeId, LossBreakdown)> {
    sample.validate()?;
    let x_f = flip(&sample.x, Axis::X);
    let y_f = flip(&sample.y, Axis::X);
    let enc = |tape: &mut Tape, c: &PointCloud| in_term("encoder", params.encode(tape, nodes, c));
    let phi_x = enc(tape, &sample.x)?;
    let phi_xf = enc(tape, &x_f)?;
    let phi_y = enc(tape, &sample.y)?;
    let phi_yf = enc(tape, &y_f)?;

    let (euc, s_xy) = in_term(
        "euclidean loss",
        loss_euc(tape, phi_x, phi_y, &sample.map_xy, sample.y.coords()),
    )?;
    let lin_x = in_term(
        "symmetry loss on X",
        loss_lin(tape, phi_x, phi_xf, &sample.sym_x, x_f.coords(), eps),
    )?;
    let lin_y = in_term(
        "symmetry loss on Y",
        loss_lin(tape, phi_y, phi_yf, &sample.sym_y, y_f.coords(), eps),
    )?;
    let lin = tape.add(lin_x.loss, lin_y.loss)?;
    let comm = in_term(
        "commutativity loss",
        loss_comm(tape, s_xy, lin_x.soft_map, lin_y.soft_map),
    )?;
    loss_total(tape, LossParts { euc, lin, comm }, weights)
}
