use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::linalg::Cholesky;
use super::mat::gemm;
use super::Mat;

/// Floor applied to pairwise distances in the backward pass so coincident
/// rows do not divide by zero.
pub const DISTANCE_FLOOR: f64 = 1e-9;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
    GatherRows(NodeId, Vec<usize>),
    SumAll(NodeId),
    SumSquares(NodeId),
    FrobeniusNorm(NodeId),
    PairwiseDistance(NodeId, NodeId),
    RowSoftmaxNeg(NodeId),
    RidgeSolve { a: NodeId, b: NodeId, factor: Cholesky },
    AddRow(NodeId, NodeId),
    Relu(NodeId),
    MaxPoolRows(NodeId, Vec<usize>),
    BroadcastRows(NodeId),
    ConcatCols(NodeId, NodeId),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape over dense matrices.
///
/// Every operation evaluates eagerly and records what its backward rule
/// needs. Nodes only reference earlier nodes, so the creation order is a
/// topological order and `backward` is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to the leaves of a tape.
#[derive(Debug, Default, Clone)]
pub struct GradMap {
    grads: BTreeMap<NodeId, Mat>,
}

impl GradMap {
    /// Gradient of `leaf`, or `None` when the root does not depend on it.
    pub fn get(&self, leaf: NodeId) -> Option<&Mat> {
        self.grads.get(&leaf)
    }

    /// Gradient of `leaf`, materializing absent entries as zeros of `shape`.
    pub fn get_or_zeros(&self, leaf: NodeId, shape: (usize, usize)) -> Mat {
        self.grads
            .get(&leaf)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(shape.0, shape.1))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn shape_str(m: &Mat) -> String {
    format!("{}x{}", m.rows(), m.cols())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    /// Smallest distance of any recorded ReLU input from zero, or of any
    /// max-pool column from a tie between its two largest entries.
    /// Finite differences with steps well below this margin see a smooth
    /// function.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for &v in self.value(*a).data() {
                        margin = margin.min(v.abs());
                    }
                }
                Op::MaxPoolRows(a, arg) => {
                    let x = self.value(*a);
                    for (c, &best) in arg.iter().enumerate() {
                        for r in (0..x.rows()).filter(|&r| r != best) {
                            margin = margin.min(x.get(best, c) - x.get(r, c));
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Scalar value of a `1x1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.shape(), (1, 1));
        v.data()[0]
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Mat) -> Result<NodeId> {
        self.push(value, Op::Leaf, "leaf")
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Mat) -> Result<NodeId> {
        self.push(value, Op::Constant, "constant")
    }

    fn push(&mut self, value: Mat, op: Op, name: &str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name.to_string() });
        }
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            other => inputs(other).iter().any(|i| self.nodes[i.0].needs_grad),
        };
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op, needs_grad });
        Ok(id)
    }

    fn check(&self, id: NodeId, op: &'static str) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Index {
                op,
                index: id.0,
                limit: self.nodes.len(),
            });
        }
        Ok(())
    }

    fn matmul_impl(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        self.check(a, "matmul")?;
        self.check(b, "matmul")?;
        let (av, bv) = (self.value(a), self.value(b));
        let inner_a = if ta { av.rows() } else { av.cols() };
        let inner_b = if tb { bv.cols() } else { bv.rows() };
        if inner_a != inner_b {
            return Err(Error::dim(
                "matmul",
                format!(
                    "{}{} times {}{}",
                    shape_str(av),
                    if ta { "^T" } else { "" },
                    shape_str(bv),
                    if tb { "^T" } else { "" }
                ),
            ));
        }
        let out = gemm(av, ta, bv, tb);
        self.push(out, Op::MatMul { a, b, ta, tb }, "matmul")
    }

    /// `a * b`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_impl(a, b, false, false)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_impl(a, b, false, true)
    }

    /// `a^T * b`.
    pub fn matmul_tn(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_impl(a, b, true, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a, "add")?;
        self.check(b, "add")?;
        let out = self.value(a).add(self.value(b))?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a, "sub")?;
        self.check(b, "sub")?;
        let out = self.value(a).sub(self.value(b))?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    /// `s * a`. A zero factor cuts the gradient path entirely.
    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        self.check(a, "scale")?;
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a, "transpose")?;
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), "transpose")
    }

    /// Row `r` of the output is row `idx[r]` of `a`.
    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        self.check(a, "gather_rows")?;
        let av = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(Error::Index {
                op: "gather_rows",
                index: bad,
                limit: av.rows(),
            });
        }
        let out = av.select_rows(idx)?;
        self.push(out, Op::GatherRows(a, idx.to_vec()), "gather_rows")
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a, "sum_all")?;
        let out = Mat::scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a), "sum_all")
    }

    /// Sum of squared entries (the squared Frobenius norm).
    pub fn sum_squares(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a, "sum_squares")?;
        let s = self.value(a).data().iter().map(|v| v * v).sum();
        self.push(Mat::scalar(s), Op::SumSquares(a), "sum_squares")
    }

    pub fn frobenius_norm(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a, "frobenius_norm")?;
        let out = Mat::scalar(self.value(a).frobenius_norm());
        self.push(out, Op::FrobeniusNorm(a), "frobenius_norm")
    }

    /// Entry `(i, j)` is the Euclidean distance between row `i` of `a` and
    /// row `j` of `b`.
    pub fn pairwise_distance(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a, "pairwise_distance")?;
        self.check(b, "pairwise_distance")?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::dim(
                "pairwise_distance",
                format!("{} vs {}", shape_str(av), shape_str(bv)),
            ));
        }
        let (na, nb) = (av.rows(), bv.rows());
        let mut out = Mat::zeros(na, nb);
        for i in 0..na {
            let ra = av.row(i);
            let orow = out.row_mut(i);
            for (j, o) in orow.iter_mut().enumerate() {
                let rb = bv.row(j);
                let mut s = 0.0;
                for (x, y) in ra.iter().zip(rb) {
                    let d = x - y;
                    s += d * d;
                }
                *o = s.sqrt();
            }
        }
        self.push(out, Op::PairwiseDistance(a, b), "pairwise_distance")
    }

    /// Row-wise `softmax(-d)`, stabilized by the row minimum.
    pub fn row_softmax_neg(&mut self, d: NodeId) -> Result<NodeId> {
        self.check(d, "row_softmax_neg")?;
        let dv = self.value(d);
        let mut out = Mat::zeros(dv.rows(), dv.cols());
        for r in 0..dv.rows() {
            let row = dv.row(r);
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            let orow = out.row_mut(r);
            let mut total = 0.0;
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (min - v).exp();
                total += *o;
            }
            let inv = 1.0 / total;
            for o in orow.iter_mut() {
                *o *= inv;
            }
        }
        self.push(out, Op::RowSoftmaxNeg(d), "row_softmax_neg")
    }

    /// `(a^T a + eps I)^-1 a^T b`, the regularized pseudo-inverse applied to `b`.
    pub fn ridge_solve(&mut self, a: NodeId, b: NodeId, eps: f64) -> Result<NodeId> {
        self.check(a, "ridge_solve")?;
        self.check(b, "ridge_solve")?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::dim(
                "ridge_solve",
                format!("{} vs {}", shape_str(av), shape_str(bv)),
            ));
        }
        if av.rows() < av.cols() {
            return Err(Error::dim(
                "ridge_solve",
                format!("{} has fewer rows than columns", shape_str(av)),
            ));
        }
        if !(eps >= 0.0) {
            return Err(Error::Contract(format!("ridge_solve eps must be >= 0, got {eps}")));
        }
        let k = av.cols();
        let mut normal = gemm(av, true, av, false);
        for i in 0..k {
            let v = normal.get(i, i) + eps;
            normal.set(i, i, v);
        }
        let label = format!("ridge_solve ({}x{} normal equations)", k, k);
        let factor = Cholesky::factor(&normal, &label)?;
        let rhs = gemm(av, true, bv, false);
        let out = factor.solve(&rhs);
        self.push(out, Op::RidgeSolve { a, b, factor }, "ridge_solve")
    }

    /// Adds a `1 x m` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.check(a, "add_row")?;
        self.check(row, "add_row")?;
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(Error::dim(
                "add_row",
                format!("{} plus row {}", shape_str(av), shape_str(rv)),
            ));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row), "add_row")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a, "relu")?;
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    /// Column-wise maximum over rows, `1 x cols`. Ties resolve to the lowest row.
    pub fn max_pool_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a, "max_pool_rows")?;
        let av = self.value(a);
        if av.rows() == 0 {
            return Err(Error::dim("max_pool_rows", "empty input"));
        }
        let mut arg = vec![0usize; av.cols()];
        let mut out = Mat::from_rows(&[av.row(0)])?;
        for r in 1..av.rows() {
            for (c, &v) in av.row(r).iter().enumerate() {
                if v > out.get(0, c) {
                    out.set(0, c, v);
                    arg[c] = r;
                }
            }
        }
        self.push(out, Op::MaxPoolRows(a, arg), "max_pool_rows")
    }

    /// Repeats a `1 x m` row `n` times.
    pub fn broadcast_rows(&mut self, row: NodeId, n: usize) -> Result<NodeId> {
        self.check(row, "broadcast_rows")?;
        let rv = self.value(row);
        if rv.rows() != 1 {
            return Err(Error::dim("broadcast_rows", format!("{} is not a row", shape_str(rv))));
        }
        let mut data = Vec::with_capacity(n * rv.cols());
        for _ in 0..n {
            data.extend_from_slice(rv.data());
        }
        let out = Mat::new(n, rv.cols(), data)?;
        self.push(out, Op::BroadcastRows(row), "broadcast_rows")
    }

    /// `[a | b]`.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a, "concat_cols")?;
        self.check(b, "concat_cols")?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::dim(
                "concat_cols",
                format!("{} beside {}", shape_str(av), shape_str(bv)),
            ));
        }
        let mut data = Vec::with_capacity(av.rows() * (av.cols() + bv.cols()));
        for r in 0..av.rows() {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let out = Mat::new(av.rows(), av.cols() + bv.cols(), data)?;
        self.push(out, Op::ConcatCols(a, b), "concat_cols")
    }

    /// Gradients of the `1x1` node `root` with respect to every leaf it
    /// depends on.
    pub fn backward(&self, root: NodeId) -> Result<GradMap> {
        self.check(root, "backward")?;
        let rv = self.value(root);
        if rv.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got {}",
                shape_str(rv)
            )));
        }
        let mut grads: Vec<Option<Mat>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Mat::scalar(1.0));
        let mut out = GradMap::default();

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    out.grads.insert(NodeId(idx), g);
                }
                Op::Constant => {}
                op => self.propagate(op, &node.value, g, &mut grads),
            }
        }
        Ok(out)
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&self, op: &Op, value: &Mat, g: Mat, grads: &mut [Option<Mat>]) {
        let mut acc = |id: NodeId, m: Mat| match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&m),
            slot @ None => *slot = Some(m),
        };
        match op {
            Op::Leaf | Op::Constant => unreachable!(),
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let da = if *ta {
                        gemm(bv, *tb, &g, true)
                    } else {
                        gemm(&g, false, bv, !*tb)
                    };
                    acc(*a, da);
                }
                if self.wants(*b) {
                    let db = if *tb {
                        gemm(&g, true, av, *ta)
                    } else {
                        gemm(av, !*ta, &g, false)
                    };
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.clone());
                }
                if self.wants(*b) {
                    acc(*b, g);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.clone());
                }
                if self.wants(*b) {
                    acc(*b, g.scale(-1.0));
                }
            }
            Op::Scale(a, s) => {
                if *s != 0.0 && self.wants(*a) {
                    acc(*a, g.scale(*s));
                }
            }
            Op::Transpose(a) => {
                if self.wants(*a) {
                    acc(*a, g.transpose());
                }
            }
            Op::GatherRows(a, idx) => {
                if self.wants(*a) {
                    let av = self.value(*a);
                    let mut da = Mat::zeros(av.rows(), av.cols());
                    for (r, &src) in idx.iter().enumerate() {
                        for (d, v) in da.row_mut(src).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    acc(*a, da);
                }
            }
            Op::SumAll(a) => {
                if self.wants(*a) {
                    let av = self.value(*a);
                    acc(*a, Mat::filled(av.rows(), av.cols(), g.data()[0]));
                }
            }
            Op::SumSquares(a) => {
                if self.wants(*a) {
                    acc(*a, self.value(*a).scale(2.0 * g.data()[0]));
                }
            }
            Op::FrobeniusNorm(a) => {
                if self.wants(*a) {
                    let norm = value.data()[0];
                    let av = self.value(*a);
                    if norm > 0.0 {
                        acc(*a, av.scale(g.data()[0] / norm));
                    } else {
                        acc(*a, Mat::zeros(av.rows(), av.cols()));
                    }
                }
            }
            Op::PairwiseDistance(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                // w_ij = g_ij / d_ij; grad_a = diag(rowsum w) a - w b,
                // grad_b = diag(colsum w) b - w^T a.
                let mut w = g;
                for (wv, &d) in w.data_mut().iter_mut().zip(value.data()) {
                    *wv /= d.max(DISTANCE_FLOOR);
                }
                if self.wants(*a) {
                    let mut da = gemm(&w, false, bv, false).scale(-1.0);
                    for i in 0..av.rows() {
                        let rs: f64 = w.row(i).iter().sum();
                        for (d, x) in da.row_mut(i).iter_mut().zip(av.row(i)) {
                            *d += rs * x;
                        }
                    }
                    acc(*a, da);
                }
                if self.wants(*b) {
                    let mut db = gemm(&w, true, av, false).scale(-1.0);
                    let mut cs = vec![0.0; bv.rows()];
                    for i in 0..w.rows() {
                        for (c, v) in cs.iter_mut().zip(w.row(i)) {
                            *c += v;
                        }
                    }
                    for (j, c) in cs.iter().enumerate() {
                        for (d, y) in db.row_mut(j).iter_mut().zip(bv.row(j)) {
                            *d += c * y;
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::RowSoftmaxNeg(d) => {
                if self.wants(*d) {
                    // dS/dd for S = softmax(-d): dd = -S * (g - <g, S>_row)
                    let mut dd = Mat::zeros(value.rows(), value.cols());
                    for r in 0..value.rows() {
                        let s = value.row(r);
                        let gr = g.row(r);
                        let dot: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, &sv), &gv) in dd.row_mut(r).iter_mut().zip(s).zip(gr) {
                            *o = -sv * (gv - dot);
                        }
                    }
                    acc(*d, dd);
                }
            }
            Op::RidgeSolve { a, b, factor } => {
                // X = M^-1 A^T B with M = A^T A + eps I.
                // Z = M^-1 G; dB = A Z; dA = B Z^T - A (Z X^T + X Z^T).
                let (av, bv) = (self.value(*a), self.value(*b));
                let z = factor.solve(&g);
                if self.wants(*b) {
                    acc(*b, gemm(av, false, &z, false));
                }
                if self.wants(*a) {
                    let zx = gemm(&z, false, value, true);
                    let sym = zx.add(&zx.transpose()).expect("square");
                    let da = gemm(bv, false, &z, true)
                        .sub(&gemm(av, false, &sym, false))
                        .expect("shapes agree");
                    acc(*a, da);
                }
            }
            Op::AddRow(a, row) => {
                if self.wants(*row) {
                    acc(*row, g.column_means().scale(g.rows() as f64));
                }
                if self.wants(*a) {
                    acc(*a, g);
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let mut da = g;
                    for (d, &v) in da.data_mut().iter_mut().zip(value.data()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    acc(*a, da);
                }
            }
            Op::MaxPoolRows(a, arg) => {
                if self.wants(*a) {
                    let av = self.value(*a);
                    let mut da = Mat::zeros(av.rows(), av.cols());
                    for (c, &r) in arg.iter().enumerate() {
                        da.set(r, c, g.get(0, c));
                    }
                    acc(*a, da);
                }
            }
            Op::BroadcastRows(row) => {
                if self.wants(*row) {
                    let mut dr = Mat::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in dr.data_mut().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    acc(*row, dr);
                }
            }
            Op::ConcatCols(a, b) => {
                let p = self.value(*a).cols();
                if self.wants(*a) {
                    let da = Mat::from_fn(g.rows(), p, |r, c| g.get(r, c));
                    acc(*a, da);
                }
                if self.wants(*b) {
                    let q = g.cols() - p;
                    let db = Mat::from_fn(g.rows(), q, |r, c| g.get(r, p + c));
                    acc(*b, db);
                }
            }
        }
    }
}

fn inputs(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Leaf | Op::Constant => vec![],
        Op::MatMul { a, b, .. }
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::PairwiseDistance(a, b)
        | Op::RidgeSolve { a, b, .. }
        | Op::AddRow(a, b)
        | Op::ConcatCols(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::Transpose(a)
        | Op::GatherRows(a, _)
        | Op::SumAll(a)
        | Op::SumSquares(a)
        | Op::FrobeniusNorm(a)
        | Op::RowSoftmaxNeg(a)
        | Op::Relu(a)
        | Op::MaxPoolRows(a, _)
        | Op::BroadcastRows(a) => vec![*a],
    }
}
