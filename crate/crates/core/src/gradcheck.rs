//! Central finite-difference checks of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffmat::{Mat, NodeId, Tape};
use crate::error::{Error, Result};
use crate::fmap::DEFAULT_RIDGE_EPS;
use crate::geom::{gen_pair, random_rotation, subsample, Partiality, ShapePairSample};
use crate::loss::{pair_objective, LossWeights};
use crate::net::{Architecture, EncoderParams, ParamNodes};

/// Step used by the central differences.
pub const FD_STEP: f64 = 1e-5;

/// Relative error `|ad - fd| / max(|ad|, |fd|)` over the concatenation of
/// all checked coordinates.
///
/// `build` records a scalar function of the given inputs on a fresh tape.
/// When `max_coords` is set, only that many coordinates (chosen by `seed`)
/// are perturbed.
pub fn relative_error<F>(inputs: &[Mat], build: F, max_coords: Option<usize>, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids = inputs
        .iter()
        .map(|m| tape.leaf(m.clone()))
        .collect::<Result<Vec<_>>>()?;
    let root = build(&mut tape, &ids)?;
    let grads = tape.backward(root)?;

    let mut coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, m)| (0..m.data().len()).map(move |j| (i, j)))
        .collect();
    if let Some(limit) = max_coords {
        if coords.len() > limit {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in 0..limit {
                let j = rng.gen_range(i..coords.len());
                coords.swap(i, j);
            }
            coords.truncate(limit);
        }
    }

    let eval = |perturbed: &[Mat]| -> Result<f64> {
        let mut t = Tape::new();
        let ids = perturbed
            .iter()
            .map(|m| t.constant(m.clone()))
            .collect::<Result<Vec<_>>>()?;
        let r = build(&mut t, &ids)?;
        Ok(t.scalar(r))
    };

    let mut diff2 = 0.0f64;
    let mut ad2 = 0.0f64;
    let mut fd2 = 0.0f64;
    let mut work: Vec<Mat> = inputs.to_vec();
    for (i, j) in coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + FD_STEP;
        let plus = eval(&work)?;
        work[i].data_mut()[j] = orig - FD_STEP;
        let minus = eval(&work)?;
        work[i].data_mut()[j] = orig;
        let fd = (plus - minus) / (2.0 * FD_STEP);
        let ad = grads.get(ids[i]).map_or(0.0, |g| g.data()[j]);
        diff2 += (ad - fd) * (ad - fd);
        ad2 += ad * ad;
        fd2 += fd * fd;
    }
    let scale = ad2.sqrt().max(fd2.sqrt());
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(diff2.sqrt() / scale)
}

/// Uniform random matrix with entries in `[-1, 1]`.
pub fn random_mat(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..=1.0))
}

/// Tolerance for a single differentiable op.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for the full training objective.
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;

/// Worst relative error of one check over all repetitions.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub reps: usize,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

type OpBuild = fn(&mut Tape, &[NodeId], &OpCase) -> Result<NodeId>;

/// Random shapes and auxiliary data for one repetition of an op check.
struct OpCase {
    idx: Vec<usize>,
    scale: f64,
}

struct OpCheck {
    name: &'static str,
    shapes: fn(&mut ChaCha8Rng) -> Vec<(usize, usize)>,
    build: OpBuild,
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.gen_range(2..7), rng.gen_range(2..7), rng.gen_range(2..7))
}

/// `sum((f - probe)^2)` reduces any op output to a scalar with a generic
/// upstream gradient.
fn reduce(t: &mut Tape, out: NodeId, probe_seed: u64) -> Result<NodeId> {
    let (r, c) = t.value(out).shape();
    let probe = random_mat(&mut ChaCha8Rng::seed_from_u64(probe_seed), r, c);
    let p = t.constant(probe)?;
    let d = t.sub(out, p)?;
    t.sum_squares(d)
}

fn op_checks() -> Vec<OpCheck> {
    vec![
        OpCheck {
            name: "matmul",
            shapes: |r| {
                let (m, k, n) = dims(r);
                vec![(m, k), (k, n)]
            },
            build: |t, x, _| t.matmul(x[0], x[1]),
        },
        OpCheck {
            name: "matmul_nt",
            shapes: |r| {
                let (m, k, n) = dims(r);
                vec![(m, k), (n, k)]
            },
            build: |t, x, _| t.matmul_nt(x[0], x[1]),
        },
        OpCheck {
            name: "matmul_tn",
            shapes: |r| {
                let (m, k, n) = dims(r);
                vec![(k, m), (k, n)]
            },
            build: |t, x, _| t.matmul_tn(x[0], x[1]),
        },
        OpCheck {
            name: "add",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![(m, n), (m, n)]
            },
            build: |t, x, _| t.add(x[0], x[1]),
        },
        OpCheck {
            name: "sub",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![(m, n), (m, n)]
            },
            build: |t, x, _| t.sub(x[0], x[1]),
        },
        OpCheck {
            name: "scale",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![(m, n)]
            },
            build: |t, x, c| t.scale(x[0], c.scale),
        },
        OpCheck {
            name: "transpose",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![(m, n)]
            },
            build: |t, x, _| t.transpose(x[0]),
        },
        OpCheck {
            name: "gather_rows",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![(m, n)]
            },
            build: |t, x, c| t.gather_rows(x[0], &c.idx),
        },
        OpCheck {
            name: "sum_all",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![(m, n)]
            },
            build: |t, x, _| t.sum_all(x[0]),
        },
        OpCheck {
            name: "sum_squares",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![(m, n)]
            },
            build: |t, x, _| t.sum_squares(x[0]),
        },
        OpCheck {
            name: "frobenius_norm",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![(m, n)]
            },
            build: |t, x, _| t.frobenius_norm(x[0]),
        },
        OpCheck {
            name: "pairwise_distance",
            shapes: |r| {
                let (m, n, k) = dims(r);
                vec![(m, k), (n, k)]
            },
            build: |t, x, _| t.pairwise_distance(x[0], x[1]),
        },
        OpCheck {
            name: "row_softmax_neg",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![(m, n)]
            },
            build: |t, x, _| t.row_softmax_neg(x[0]),
        },
        OpCheck {
            name: "ridge_solve",
            shapes: |r| {
                let k = r.gen_range(2..6);
                let n = k + r.gen_range(2..8);
                let m = r.gen_range(2..6);
                vec![(n, k), (n, m)]
            },
            build: |t, x, _| t.ridge_solve(x[0], x[1], 1e-6),
        },
        OpCheck {
            name: "add_row",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![(m, n), (1, n)]
            },
            build: |t, x, _| t.add_row(x[0], x[1]),
        },
        OpCheck {
            name: "relu",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![(m, n)]
            },
            build: |t, x, _| t.relu(x[0]),
        },
        OpCheck {
            name: "max_pool_rows",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![(m, n)]
            },
            build: |t, x, _| t.max_pool_rows(x[0]),
        },
        OpCheck {
            name: "broadcast_rows",
            shapes: |r| {
                let (_, n, _) = dims(r);
                vec![(1, n)]
            },
            build: |t, x, c| t.broadcast_rows(x[0], c.idx.len()),
        },
        OpCheck {
            name: "concat_cols",
            shapes: |r| {
                let (m, n, k) = dims(r);
                vec![(m, n), (m, k)]
            },
            build: |t, x, _| t.concat_cols(x[0], x[1]),
        },
    ]
}

/// Runs every op check and the composite objective check `reps` times on
/// randomized inputs.
pub fn run_suite(reps: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for check in op_checks() {
        let mut worst = 0.0f64;
        for _ in 0..reps {
            let shapes = (check.shapes)(&mut rng);
            let inputs: Vec<Mat> = shapes.iter().map(|&(r, c)| random_mat(&mut rng, r, c)).collect();
            let rows = shapes[0].0;
            let case = OpCase {
                idx: (0..rng.gen_range(1..8)).map(|_| rng.gen_range(0..rows)).collect(),
                scale: rng.gen_range(-3.0..3.0),
            };
            let probe_seed = rng.gen();
            let err = relative_error(
                &inputs,
                |t, ids| {
                    let y = (check.build)(t, ids, &case)?;
                    reduce(t, y, probe_seed)
                },
                None,
                0,
            )?;
            worst = worst.max(err);
        }
        out.push(CheckOutcome {
            name: check.name.to_string(),
            max_rel_error: worst,
            tolerance: OP_TOLERANCE,
            reps,
        });
    }
    for (name, weights) in [
        ("objective (full weights)", LossWeights::FULL),
        ("objective (partial weights)", LossWeights::PARTIAL),
    ] {
        let mut worst = 0.0f64;
        for _ in 0..reps {
            worst = worst.max(composite_error(&mut rng, weights)?);
        }
        out.push(CheckOutcome {
            name: name.to_string(),
            max_rel_error: worst,
            tolerance: COMPOSITE_TOLERANCE,
            reps,
        });
    }
    Ok(out)
}

/// Inputs whose ReLU and max-pool kinks lie closer than this are redrawn.
const KINK_MARGIN: f64 = 10.0 * FD_STEP;

/// Full objective of a small encoder on a random 16-point pair, checked
/// with respect to every encoder parameter. The objective is only piecewise
/// smooth, so parameters are redrawn until no kink lies within reach of the
/// finite-difference step.
fn composite_error(rng: &mut ChaCha8Rng, weights: LossWeights) -> Result<f64> {
    let g = gen_pair(rng.gen(), (rng.gen(), rng.gen()), 200, Partiality::None, rng.gen())?;
    let sample = subsample(&g.sample, 16, rng.gen())?;
    let sample = ShapePairSample {
        x: sample.x.rotated(&random_rotation(rng.gen()))?,
        y: sample.y.rotated(&random_rotation(rng.gen()))?,
        ..sample
    };
    let arch = Architecture {
        point_widths: vec![3, 8, 8],
        head_widths: vec![16, 8, 4],
    };
    let build = |t: &mut Tape, ids: &[NodeId], params: &EncoderParams| -> Result<NodeId> {
        let nodes = ParamNodes::from_ids(ids.to_vec());
        Ok(pair_objective(t, params, &nodes, &sample, weights, DEFAULT_RIDGE_EPS)?.0)
    };
    for _ in 0..MAX_REDRAWS {
        let mut params = EncoderParams::init(arch.clone(), rng.gen())?;
        for l in &mut params.layers {
            l.bias = random_mat(rng, 1, l.bias.cols()).scale(0.1);
        }
        let mut probe = Tape::new();
        let ids = params
            .tensors()
            .into_iter()
            .map(|m| probe.constant(m.clone()))
            .collect::<Result<Vec<_>>>()?;
        build(&mut probe, &ids, &params)?;
        if probe.kink_margin() < KINK_MARGIN {
            continue;
        }
        let inputs: Vec<Mat> = params.tensors().into_iter().cloned().collect();
        return relative_error(&inputs, |t, ids| build(t, ids, &params), None, 0);
    }
    Err(Error::Degenerate(format!(
        "no encoder draw kept kinks {KINK_MARGIN:e} away in {MAX_REDRAWS} attempts"
    )))
}

const MAX_REDRAWS: usize = 1000;
