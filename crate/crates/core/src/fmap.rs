//! Functional-map solves, soft correspondences, and nearest-neighbor
//! conversion to pointwise maps.

use crate::diffmat::linalg::Cholesky;
use crate::diffmat::{Mat, NodeId, Tape};
use crate::error::{Error, Result};
use crate::geom::IndexMap;

/// Default Tikhonov weight of the pseudo-inverse in the symmetry solve.
pub const DEFAULT_RIDGE_EPS: f64 = 1e-6;

/// Per-point embedding `n x k` recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Embedding(pub NodeId);

/// A `k x k` functional map recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FMap(pub NodeId);

/// Row-stochastic `n_src x n_dst` soft correspondence recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SoftMap(pub NodeId);

/// Least-squares map `C` with `phi C^T ~ sym(phi_f)`, i.e.
/// `C = (phi^+ Pi phi_f)^T` with a ridge-regularized pseudo-inverse.
pub fn self_symmetry_fmap(tape: &mut Tape, phi: Embedding, phi_f: Embedding, sym: &IndexMap, eps: f64) -> Result<FMap> {
    let (a, b) = (tape.value(phi.0).shape(), tape.value(phi_f.0).shape());
    if a != b {
        return Err(Error::dim(
            "self_symmetry_fmap",
            format!("embeddings {}x{} and {}x{}", a.0, a.1, b.0, b.1),
        ));
    }
    if sym.src_size() != a.0 || sym.dst_size() != b.0 {
        return Err(Error::dim(
            "self_symmetry_fmap",
            format!("symmetry map {sym} on {} points", a.0),
        ));
    }
    let target = tape.gather_rows(phi_f.0, sym.targets())?;
    let solved = tape.ridge_solve(phi.0, target, eps).map_err(|e| match e {
        Error::Singular { solve, pivot } => Error::Singular {
            solve: format!("self-symmetry map: {solve}"),
            pivot,
        },
        other => other,
    })?;
    Ok(FMap(tape.transpose(solved)?))
}

/// `phi C^T`.
pub fn transform_embedding(tape: &mut Tape, phi: Embedding, c: FMap) -> Result<Embedding> {
    Ok(Embedding(tape.matmul_nt(phi.0, c.0)?))
}

/// `S_ij = softmax_j(-||a_i - b_j||)`.
pub fn soft_correspondence(tape: &mut Tape, a: Embedding, b: Embedding) -> Result<SoftMap> {
    let d = tape.pairwise_distance(a.0, b.0)?;
    Ok(SoftMap(tape.row_softmax_neg(d)?))
}

/// Closed-form minimizer of `||C A - B||^2 + alpha ||C o R||^2` for
/// descriptor coefficients `A`, `B` (`k x d`). Each row of `C` solves
/// `c_r (A A^T + alpha diag(R_r^2)) = b_r A^T`; `R` defaults to all ones.
pub fn generic_fmap_solve(desc_a: &Mat, desc_b: &Mat, alpha: f64, reg: Option<&Mat>) -> Result<Mat> {
    let (k, d) = desc_a.shape();
    let (kb, db) = desc_b.shape();
    if d != db {
        return Err(Error::dim(
            "generic_fmap_solve",
            format!("descriptor counts {d} and {db} differ"),
        ));
    }
    if !(alpha >= 0.0) {
        return Err(Error::Contract(format!("alpha must be >= 0, got {alpha}")));
    }
    if let Some(r) = reg {
        if r.shape() != (kb, k) {
            return Err(Error::dim(
                "generic_fmap_solve",
                format!("mask is {}x{}, map is {kb}x{k}", r.rows(), r.cols()),
            ));
        }
    }
    let gram = desc_a.matmul(&desc_a.transpose())?;
    let rhs = desc_a.matmul(&desc_b.transpose())?; // column r is (b_r A^T)^T
    let mut c = Mat::zeros(kb, k);
    for r in 0..kb {
        let mut m = gram.clone();
        for j in 0..k {
            let w = reg.map_or(1.0, |reg| reg.get(r, j));
            m.set(j, j, m.get(j, j) + alpha * w * w);
        }
        let factor = Cholesky::factor(&m, &format!("functional map row {r}"))?;
        let col = Mat::from_fn(k, 1, |j, _| rhs.get(j, r));
        let sol = factor.solve(&col);
        c.row_mut(r).copy_from_slice(sol.data());
    }
    Ok(c)
}

/// For each row of `phi_x C^T`, the nearest row of `phi_y` (lowest index on
/// ties).
pub fn fmap_to_pointmap(phi_x: &Mat, phi_y: &Mat, c: &Mat) -> Result<IndexMap> {
    if c.rows() != phi_y.cols() || c.cols() != phi_x.cols() {
        return Err(Error::dim(
            "fmap_to_pointmap",
            format!(
                "C is {}x{} for embeddings of width {} and {}",
                c.rows(),
                c.cols(),
                phi_x.cols(),
                phi_y.cols()
            ),
        ));
    }
    let moved = phi_x.matmul(&c.transpose())?;
    nearest_rows(&moved, phi_y)
}

/// Nearest-neighbor correspondence between two embeddings.
pub fn nn_correspondence(phi_x: &Mat, phi_y: &Mat) -> Result<IndexMap> {
    if phi_x.cols() != phi_y.cols() {
        return Err(Error::dim(
            "nn_correspondence",
            format!("embedding widths {} and {}", phi_x.cols(), phi_y.cols()),
        ));
    }
    nearest_rows(phi_x, phi_y)
}

fn nearest_rows(query: &Mat, base: &Mat) -> Result<IndexMap> {
    if base.rows() == 0 {
        return Err(Error::Size("nearest neighbor search over an empty set".into()));
    }
    let targets = (0..query.rows())
        .map(|i| {
            let q = query.row(i);
            let mut best = (f64::INFINITY, 0);
            for j in 0..base.rows() {
                let d: f64 = q.iter().zip(base.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect();
    IndexMap::new(targets, base.rows())
}
