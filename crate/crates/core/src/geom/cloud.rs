use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffmat::Mat;
use crate::error::{Error, Result};

/// Smallest number of points a cloud may hold.
pub const MIN_POINTS: usize = 4;

/// Largest tilt away from the vertical axis used by [`random_rotation`].
pub const MAX_TILT_DEG: f64 = 15.0;

/// An `n x 3` point set, optionally with triangle connectivity.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    coords: Mat,
    faces: Option<Vec<[usize; 3]>>,
    label: String,
}

impl PointCloud {
    pub fn new(coords: Mat, label: impl Into<String>) -> Result<Self> {
        Self::build(coords, None, label.into())
    }

    pub fn with_faces(coords: Mat, faces: Vec<[usize; 3]>, label: impl Into<String>) -> Result<Self> {
        Self::build(coords, Some(faces), label.into())
    }

    fn build(coords: Mat, faces: Option<Vec<[usize; 3]>>, label: String) -> Result<Self> {
        if coords.cols() != 3 {
            return Err(Error::dim(
                "PointCloud",
                format!("expected 3 columns, got {}", coords.cols()),
            ));
        }
        if coords.rows() < MIN_POINTS {
            return Err(Error::Size(format!(
                "point cloud needs at least {MIN_POINTS} points, got {}",
                coords.rows()
            )));
        }
        if !coords.is_finite() {
            return Err(Error::NonFinite {
                op: format!("coordinates of '{label}'"),
            });
        }
        if let Some(faces) = &faces {
            let n = coords.rows();
            if let Some(bad) = faces.iter().flatten().find(|&&i| i >= n) {
                return Err(Error::Index {
                    op: "PointCloud faces",
                    index: *bad,
                    limit: n,
                });
            }
        }
        Ok(PointCloud { coords, faces, label })
    }

    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.rows() == 0
    }

    pub fn coords(&self) -> &Mat {
        &self.coords
    }

    pub fn faces(&self) -> Option<&[[usize; 3]]> {
        self.faces.as_deref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn set_label(&mut self, label: impl Into<String>) {
        self.label = label.into();
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        let r = self.coords.row(i);
        [r[0], r[1], r[2]]
    }

    pub fn centroid(&self) -> [f64; 3] {
        let m = self.coords.column_means();
        [m.data()[0], m.data()[1], m.data()[2]]
    }

    /// Applies `p -> R p` to every point (rotation about the origin).
    pub fn rotated(&self, rotation: &Mat) -> Result<PointCloud> {
        if rotation.shape() != (3, 3) {
            return Err(Error::dim("rotated", "rotation must be 3x3"));
        }
        let coords = self.coords.matmul(&rotation.transpose())?;
        Ok(PointCloud {
            coords,
            faces: self.faces.clone(),
            label: self.label.clone(),
        })
    }

    /// Cloud restricted to `idx`, in that order. Faces are dropped.
    pub fn select(&self, idx: &[usize]) -> Result<PointCloud> {
        PointCloud::new(self.coords.select_rows(idx)?, self.label.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::Contract(format!("unknown axis '{other}'"))),
        }
    }
}

/// Reflects the cloud through the plane orthogonal to `axis` that passes
/// through its centroid. Point order is unchanged.
pub fn flip(p: &PointCloud, axis: Axis) -> PointCloud {
    let a = axis.index();
    let c = p.centroid()[a];
    let mut coords = p.coords.clone();
    for r in 0..coords.rows() {
        let v = coords.get(r, a);
        coords.set(r, a, c - (v - c));
    }
    PointCloud {
        coords,
        faces: p.faces.clone(),
        label: format!("{}_flip", p.label),
    }
}

fn axis_angle(axis: [f64; 3], angle: f64) -> Mat {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    Mat::from_rows(&[
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ])
    .expect("3x3")
}

/// Rotation about the unit `axis` by `angle` radians.
pub fn rotation_about(axis: [f64; 3], angle: f64) -> Mat {
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    axis_angle([axis[0] / norm, axis[1] / norm, axis[2] / norm], angle)
}

/// Uniform yaw about the vertical (y) axis followed by a tilt of at most
/// [`MAX_TILT_DEG`] about a random horizontal axis.
pub fn random_rotation(seed: u64) -> Mat {
    random_rotation_within(seed, 180.0)
}

/// As [`random_rotation`] with the yaw drawn uniformly from
/// `[-max_yaw_deg, max_yaw_deg]`; 180 or more gives the full circle.
pub fn random_rotation_within(seed: u64, max_yaw_deg: f64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let yaw = if max_yaw_deg >= 180.0 {
        rng.gen_range(0.0..2.0 * PI)
    } else {
        let m = max_yaw_deg.max(0.0).to_radians();
        rng.gen_range(-m..=m)
    };
    let tilt = rng.gen_range(0.0..=MAX_TILT_DEG.to_radians());
    let heading = rng.gen_range(0.0..2.0 * PI);
    let yaw_m = axis_angle([0.0, 1.0, 0.0], yaw);
    let tilt_m = axis_angle([heading.cos(), 0.0, heading.sin()], tilt);
    tilt_m.matmul(&yaw_m).expect("3x3")
}

/// A pointwise map `i -> targets[i]` from a source of `targets.len()` points
/// into a destination of `dst_size` points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMap {
    dst_size: usize,
    targets: Vec<usize>,
}

impl IndexMap {
    pub fn new(targets: Vec<usize>, dst_size: usize) -> Result<Self> {
        if let Some(&bad) = targets.iter().find(|&&t| t >= dst_size) {
            return Err(Error::Index {
                op: "IndexMap",
                index: bad,
                limit: dst_size,
            });
        }
        Ok(IndexMap { dst_size, targets })
    }

    pub fn identity(n: usize) -> Self {
        IndexMap {
            dst_size: n,
            targets: (0..n).collect(),
        }
    }

    pub fn src_size(&self) -> usize {
        self.targets.len()
    }

    pub fn dst_size(&self) -> usize {
        self.dst_size
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn get(&self, i: usize) -> usize {
        self.targets[i]
    }

    pub fn is_involution(&self) -> bool {
        self.dst_size == self.targets.len() && self.targets.iter().enumerate().all(|(i, &t)| self.targets[t] == i)
    }

    pub fn is_injective(&self) -> bool {
        let mut seen = vec![false; self.dst_size];
        self.targets.iter().all(|&t| !std::mem::replace(&mut seen[t], true))
    }

    /// The `src x dst` 0/1 matrix with a single one per row.
    pub fn to_matrix(&self) -> Mat {
        let mut m = Mat::zeros(self.targets.len(), self.dst_size);
        for (i, &t) in self.targets.iter().enumerate() {
            m.set(i, t, 1.0);
        }
        m
    }

    /// `other(self(i))`.
    pub fn then(&self, other: &IndexMap) -> Result<IndexMap> {
        if other.src_size() != self.dst_size {
            return Err(Error::dim(
                "IndexMap::then",
                format!("{} targets feed a map over {}", self.dst_size, other.src_size()),
            ));
        }
        IndexMap::new(self.targets.iter().map(|&t| other.targets[t]).collect(), other.dst_size)
    }
}

impl fmt::Display for IndexMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IndexMap({} -> {})", self.targets.len(), self.dst_size)
    }
}

/// Two shapes with ground-truth correspondence and self-symmetry maps.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapePairSample {
    pub x: PointCloud,
    pub y: PointCloud,
    pub map_xy: IndexMap,
    pub sym_x: IndexMap,
    pub sym_y: IndexMap,
}

impl ShapePairSample {
    pub fn validate(&self) -> Result<()> {
        let (nx, ny) = (self.x.len(), self.y.len());
        let checks = [
            ("map_xy", &self.map_xy, nx, ny),
            ("sym_x", &self.sym_x, nx, nx),
            ("sym_y", &self.sym_y, ny, ny),
        ];
        for (name, map, src, dst) in checks {
            if map.src_size() != src || map.dst_size() != dst {
                return Err(Error::Size(format!(
                    "{name} is {} -> {}, expected {src} -> {dst}",
                    map.src_size(),
                    map.dst_size()
                )));
            }
        }
        Ok(())
    }
}

/// Restricts `sym` to `chosen` (indices into its source). Partners that were
/// not chosen fall back to the chosen point closest to the partner.
fn restrict_symmetry(sym: &IndexMap, chosen: &[usize], cloud: &PointCloud) -> IndexMap {
    let pos: HashMap<usize, usize> = chosen.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let targets = chosen
        .iter()
        .map(|&i| {
            let partner = sym.get(i);
            if let Some(&k) = pos.get(&partner) {
                return k;
            }
            let p = cloud.point(partner);
            let mut best = (f64::INFINITY, 0);
            for (k, &j) in chosen.iter().enumerate() {
                let q = cloud.point(j);
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d < best.0 {
                    best = (d, k);
                }
            }
            best.1
        })
        .collect();
    IndexMap {
        dst_size: chosen.len(),
        targets,
    }
}

/// Draws `q` points of X in symmetric pairs `(i, sym_x(i))` and keeps the
/// `map_xy` images of those points on Y.
pub fn subsample(s: &ShapePairSample, q: usize, seed: u64) -> Result<ShapePairSample> {
    s.validate()?;
    let (nx, ny) = (s.x.len(), s.y.len());
    if q > nx.min(ny) {
        return Err(Error::Size(format!(
            "cannot sample {q} points from shapes of {nx} and {ny}"
        )));
    }
    if q < MIN_POINTS {
        return Err(Error::Size(format!("sample size {q} is below {MIN_POINTS}")));
    }
    if !s.map_xy.is_injective() {
        return Err(Error::Contract("map_xy must be injective to subsample".into()));
    }

    // orbits of sym_x: pairs for involutive points, singletons otherwise
    let mut orbits: Vec<Vec<usize>> = Vec::new();
    let mut taken = vec![false; nx];
    for i in 0..nx {
        if taken[i] {
            continue;
        }
        let j = s.sym_x.get(i);
        if j != i && !taken[j] && s.sym_x.get(j) == i {
            taken[i] = true;
            taken[j] = true;
            orbits.push(vec![i, j]);
        } else {
            taken[i] = true;
            orbits.push(vec![i]);
        }
    }

    let mut chosen: Vec<usize> = if q == nx {
        (0..nx).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        orbits.shuffle(&mut rng);
        let mut chosen = Vec::with_capacity(q);
        let mut leftovers = Vec::new();
        for orbit in &orbits {
            let room = q - chosen.len();
            if room == 0 {
                break;
            }
            if orbit.len() <= room {
                chosen.extend_from_slice(orbit);
            } else {
                leftovers.push(orbit[0]);
            }
        }
        // an odd remainder can only be filled by splitting one pair
        let mut extra = leftovers.into_iter();
        while chosen.len() < q {
            match extra.next() {
                Some(i) => chosen.push(i),
                None => break,
            }
        }
        chosen
    };
    chosen.sort_unstable();
    debug_assert_eq!(chosen.len(), q);

    let chosen_y: Vec<usize> = chosen.iter().map(|&i| s.map_xy.get(i)).collect();
    let x = s.x.select(&chosen)?;
    let y = s.y.select(&chosen_y)?;
    let sym_x = restrict_symmetry(&s.sym_x, &chosen, &s.x);
    let sym_y = restrict_symmetry(&s.sym_y, &chosen_y, &s.y);
    Ok(ShapePairSample {
        x,
        y,
        map_xy: IndexMap::identity(q),
        sym_x,
        sym_y,
    })
}
