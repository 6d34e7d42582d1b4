//! Small dense factorizations used by the solve operations.

use crate::error::{Error, Result};

use super::Mat;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Mat,
}

impl Cholesky {
    /// Factors `m`. A pivot at or below `n * eps * max_diag` is reported as
    /// a singular system named by `solve`.
    pub fn factor(m: &Mat, solve: &str) -> Result<Self> {
        let n = m.rows();
        if m.cols() != n {
            return Err(Error::dim("cholesky", format!("{}x{} is not square", n, m.cols())));
        }
        let max_diag = (0..n).fold(0.0f64, |acc, i| acc.max(m.get(i, i).abs()));
        let tol = (n.max(1) as f64) * f64::EPSILON * max_diag;
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = m.get(j, j);
            for p in 0..j {
                d -= l.get(j, p) * l.get(j, p);
            }
            if !(d > tol) {
                return Err(Error::Singular {
                    solve: solve.to_string(),
                    pivot: j,
                });
            }
            let djj = d.sqrt();
            l.set(j, j, djj);
            for i in j + 1..n {
                let mut s = m.get(i, j);
                for p in 0..j {
                    s -= l.get(i, p) * l.get(j, p);
                }
                l.set(i, j, s / djj);
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// Solves `M X = B` column by column.
    pub fn solve(&self, b: &Mat) -> Mat {
        let n = self.dim();
        debug_assert_eq!(b.rows(), n);
        let mut x = b.clone();
        let cols = b.cols();
        // forward: L y = b
        for i in 0..n {
            for p in 0..i {
                let lip = self.l.get(i, p);
                if lip != 0.0 {
                    for c in 0..cols {
                        let v = x.get(i, c) - lip * x.get(p, c);
                        x.set(i, c, v);
                    }
                }
            }
            let lii = self.l.get(i, i);
            for c in 0..cols {
                x.set(i, c, x.get(i, c) / lii);
            }
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            for p in i + 1..n {
                let lpi = self.l.get(p, i);
                if lpi != 0.0 {
                    for c in 0..cols {
                        let v = x.get(i, c) - lpi * x.get(p, c);
                        x.set(i, c, v);
                    }
                }
            }
            let lii = self.l.get(i, i);
            for c in 0..cols {
                x.set(i, c, x.get(i, c) / lii);
            }
        }
        x
    }
}
