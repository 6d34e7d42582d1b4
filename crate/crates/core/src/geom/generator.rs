//! Synthetic articulated bodies with exact left/right symmetry.
//!
//! A body is a torso capsule, a head sphere with a small nose bump, two
//! arms (upper arm and forearm capsules) and two legs (thigh, shin, foot).
//! Points are drawn on the `x >= 0` half and mirrored across `x = 0`, so
//! point `i` and point `i + n/2` are symmetric partners. Each limb is then
//! posed rigidly per segment with independent left and right joint angles,
//! which keeps every segment's intrinsic geometry and therefore the
//! symmetry pairing intact.
//!
//! Axes: `x` lateral, `y` up, `z` forward.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmat::Mat;
use crate::error::{Error, Result};

use super::cloud::{rotation_about, IndexMap, PointCloud, ShapePairSample, MIN_POINTS};
use super::geodesic::{geodesics, DEFAULT_KNN};

type V3 = [f64; 3];

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn mul(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn apply(r: &Mat, v: V3) -> V3 {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        let row = r.row(i);
        *o = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
    }
    out
}

fn compose(a: &Mat, b: &Mat) -> Mat {
    a.matmul(b).expect("3x3")
}

fn rot_x(angle: f64) -> Mat {
    rotation_about([1.0, 0.0, 0.0], angle)
}

fn rot_y(angle: f64) -> Mat {
    rotation_about([0.0, 1.0, 0.0], angle)
}

fn rot_z(angle: f64) -> Mat {
    rotation_about([0.0, 0.0, 1.0], angle)
}

/// Body proportions; one template is one "subject".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyTemplate {
    pub torso_len: f64,
    pub torso_radius: f64,
    pub head_radius: f64,
    pub upper_arm_len: f64,
    pub upper_arm_radius: f64,
    pub forearm_len: f64,
    pub forearm_radius: f64,
    pub thigh_len: f64,
    pub thigh_radius: f64,
    pub shin_len: f64,
    pub shin_radius: f64,
    pub foot_len: f64,
    pub foot_radius: f64,
    /// Angle of the resting arm away from the vertical.
    pub arm_rest_angle: f64,
}

impl BodyTemplate {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e3a_11c9_0b5d_4f21);
        let mut v = |base: f64| base * rng.gen_range(0.85..1.15);
        BodyTemplate {
            torso_len: v(0.55),
            torso_radius: v(0.16),
            head_radius: v(0.11),
            upper_arm_len: v(0.30),
            upper_arm_radius: v(0.05),
            forearm_len: v(0.28),
            forearm_radius: v(0.045),
            thigh_len: v(0.42),
            thigh_radius: v(0.075),
            shin_len: v(0.40),
            shin_radius: v(0.06),
            foot_len: v(0.15),
            foot_radius: v(0.04),
            arm_rest_angle: v(25.0f64.to_radians()),
        }
    }

    fn shoulder(&self) -> V3 {
        [self.torso_radius * 0.85, self.torso_len, 0.0]
    }

    fn hip(&self) -> V3 {
        [self.torso_radius * 0.55, -self.torso_radius * 0.5, 0.0]
    }

    fn neck(&self) -> V3 {
        [0.0, self.torso_len + self.torso_radius, 0.0]
    }

    fn head_center(&self) -> V3 {
        add(self.neck(), [0.0, self.head_radius * 0.7, 0.0])
    }

    fn arm_dir(&self) -> V3 {
        [self.arm_rest_angle.sin(), -self.arm_rest_angle.cos(), 0.0]
    }

    fn elbow(&self) -> V3 {
        add(self.shoulder(), mul(self.arm_dir(), self.upper_arm_len))
    }

    fn knee(&self) -> V3 {
        add(self.hip(), [0.0, -self.thigh_len, 0.0])
    }

    fn ankle(&self) -> V3 {
        add(self.knee(), [0.0, -self.shin_len, 0.0])
    }

    fn capsules(&self) -> [Capsule; SEGMENTS] {
        let down = [0.0, -1.0, 0.0];
        let head_c = self.head_center();
        [
            Capsule::new(
                Segment::Torso,
                [0.0; 3],
                [0.0, 1.0, 0.0],
                self.torso_len,
                self.torso_radius,
            ),
            Capsule::new(Segment::Head, head_c, [0.0, 1.0, 0.0], 0.0, self.head_radius),
            Capsule::new(
                Segment::Nose,
                add(head_c, [0.0, 0.0, self.head_radius]),
                [0.0, 0.0, 1.0],
                0.0,
                self.head_radius * 0.35,
            ),
            Capsule::new(
                Segment::UpperArm,
                self.shoulder(),
                self.arm_dir(),
                self.upper_arm_len,
                self.upper_arm_radius,
            ),
            Capsule::new(
                Segment::Forearm,
                self.elbow(),
                self.arm_dir(),
                self.forearm_len,
                self.forearm_radius,
            ),
            Capsule::new(Segment::Thigh, self.hip(), down, self.thigh_len, self.thigh_radius),
            Capsule::new(Segment::Shin, self.knee(), down, self.shin_len, self.shin_radius),
            Capsule::new(
                Segment::Foot,
                self.ankle(),
                [0.0, 0.0, 1.0],
                self.foot_len,
                self.foot_radius,
            ),
        ]
    }
}

const SEGMENTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Segment {
    Torso,
    Head,
    Nose,
    UpperArm,
    Forearm,
    Thigh,
    Shin,
    Foot,
}

impl Segment {
    /// Parts centred on the mirror plane are sampled on their `x >= 0` half.
    fn is_central(self) -> bool {
        matches!(self, Segment::Torso | Segment::Head | Segment::Nose)
    }
}

#[derive(Clone, Debug)]
struct Capsule {
    segment: Segment,
    start: V3,
    dir: V3,
    len: f64,
    radius: f64,
}

impl Capsule {
    fn new(segment: Segment, start: V3, dir: V3, len: f64, radius: f64) -> Self {
        Capsule {
            segment,
            start,
            dir,
            len,
            radius,
        }
    }

    fn area(&self) -> f64 {
        let full = 2.0 * PI * self.radius * self.len + 4.0 * PI * self.radius * self.radius;
        if self.segment.is_central() {
            full / 2.0
        } else {
            full
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> V3 {
        let side = 2.0 * PI * self.radius * self.len;
        let caps = 4.0 * PI * self.radius * self.radius;
        let mut p = if rng.gen_range(0.0..side + caps) < side {
            let (e1, e2) = orthonormal(self.dir);
            let t = rng.gen_range(0.0..self.len);
            let theta = rng.gen_range(0.0..2.0 * PI);
            let radial = add(mul(e1, theta.cos()), mul(e2, theta.sin()));
            add(add(self.start, mul(self.dir, t)), mul(radial, self.radius))
        } else {
            let v = unit_vector(rng);
            let dot = v[0] * self.dir[0] + v[1] * self.dir[1] + v[2] * self.dir[2];
            let base = if dot < 0.0 {
                self.start
            } else {
                add(self.start, mul(self.dir, self.len))
            };
            add(base, mul(v, self.radius))
        };
        if self.segment.is_central() {
            p[0] = p[0].abs().max(1e-6);
        }
        p
    }
}

fn orthonormal(d: V3) -> (V3, V3) {
    let helper = if d[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let cross = |a: V3, b: V3| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let e1 = cross(d, helper);
    let n1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    let e1 = mul(e1, 1.0 / n1);
    (e1, cross(d, e1))
}

fn unit_vector(rng: &mut ChaCha8Rng) -> V3 {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 > 1e-6 && n2 <= 1.0 {
            return mul(v, 1.0 / n2.sqrt());
        }
    }
}

/// Joint angles (radians) for one side, expressed in right-side convention.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LimbPose {
    pub shoulder_abduct: f64,
    pub shoulder_swing: f64,
    pub elbow: f64,
    pub hip_abduct: f64,
    pub hip_swing: f64,
    pub knee: f64,
    pub ankle: f64,
}

impl LimbPose {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let deg = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| rng.gen_range(lo..hi).to_radians();
        LimbPose {
            shoulder_abduct: deg(rng, -20.0, 50.0),
            shoulder_swing: deg(rng, -45.0, 60.0),
            elbow: deg(rng, 0.0, 75.0),
            hip_abduct: deg(rng, -5.0, 25.0),
            hip_swing: deg(rng, -30.0, 40.0),
            knee: deg(rng, 0.0, 60.0),
            ankle: deg(rng, -15.0, 15.0),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub right: LimbPose,
    pub left: LimbPose,
    pub head_yaw: f64,
}

impl Pose {
    pub fn rest() -> Self {
        Pose::default()
    }

    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51d2_96ab_e003_c8f7);
        let right = LimbPose::random(&mut rng);
        let left = LimbPose::random(&mut rng);
        let head_yaw = rng.gen_range(-25.0f64..25.0).to_radians();
        Pose { right, left, head_yaw }
    }
}

/// Per-segment (joint, rotation) for one side in right-side convention.
fn limb_frames(t: &BodyTemplate, pose: &LimbPose) -> [(V3, V3, Mat); SEGMENTS] {
    let ident = Mat::eye(3);
    let r_sh = compose(&rot_x(-pose.shoulder_swing), &rot_z(pose.shoulder_abduct));
    let r_fore = compose(&r_sh, &rot_x(-pose.elbow));
    let r_hip = compose(&rot_x(-pose.hip_swing), &rot_z(pose.hip_abduct));
    let r_shin = compose(&r_hip, &rot_x(pose.knee));
    let r_foot = compose(&r_shin, &rot_x(pose.ankle));
    let elbow = add(t.shoulder(), apply(&r_sh, sub(t.elbow(), t.shoulder())));
    let knee = add(t.hip(), apply(&r_hip, sub(t.knee(), t.hip())));
    let ankle = add(knee, apply(&r_shin, sub(t.ankle(), t.knee())));
    // (rest joint, posed joint, rotation)
    [
        ([0.0; 3], [0.0; 3], ident.clone()),
        ([0.0; 3], [0.0; 3], ident.clone()),
        ([0.0; 3], [0.0; 3], ident),
        (t.shoulder(), t.shoulder(), r_sh),
        (t.elbow(), elbow, r_fore),
        (t.hip(), t.hip(), r_hip),
        (t.knee(), knee, r_shin),
        (t.ankle(), ankle, r_foot),
    ]
}

/// Rest-pose samples on the `x >= 0` half: `(segment index, position)`.
fn sample_half(t: &BodyTemplate, template_seed: u64, half: usize) -> Vec<(usize, V3)> {
    let caps = t.capsules();
    let areas: Vec<f64> = caps.iter().map(Capsule::area).collect();
    let total: f64 = areas.iter().sum();
    // largest-remainder apportionment of the half budget
    let quotas: Vec<f64> = areas.iter().map(|a| a / total * half as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..SEGMENTS).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = half - counts.iter().sum::<usize>();
    for &s in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        counts[s] += 1;
        missing -= 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(template_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ half as u64);
    let mut out = Vec::with_capacity(half);
    for (s, cap) in caps.iter().enumerate() {
        for _ in 0..counts[s] {
            out.push((s, cap.sample(&mut rng)));
        }
    }
    out
}

fn pose_point(frames: &[(V3, V3, Mat); SEGMENTS], segment: usize, p: V3) -> V3 {
    let (rest, posed, r) = &frames[segment];
    add(*posed, apply(r, sub(p, *rest)))
}

/// Samples `n` points of template `template_seed` in `pose`; returns the
/// cloud and its symmetry pairing `i <-> i + n/2`.
pub fn gen_shape_posed(template_seed: u64, pose: &Pose, n: usize, label: &str) -> Result<(PointCloud, IndexMap)> {
    if n % 2 != 0 || n < MIN_POINTS {
        return Err(Error::Size(format!(
            "shape size must be even and >= {MIN_POINTS}, got {n}"
        )));
    }
    let t = BodyTemplate::from_seed(template_seed);
    let half = n / 2;
    let samples = sample_half(&t, template_seed, half);
    let right = limb_frames(&t, &pose.right);
    let left = limb_frames(&t, &pose.left);
    let neck = t.neck();
    let r_head = rot_y(pose.head_yaw);
    let head_segments = [1usize, 2];

    let mut coords = Mat::zeros(n, 3);
    for (i, &(seg, p)) in samples.iter().enumerate() {
        let pr = pose_point(&right, seg, p);
        let pl = pose_point(&left, seg, p);
        let mut pl = [-pl[0], pl[1], pl[2]];
        let mut pr = pr;
        if head_segments.contains(&seg) {
            pr = add(neck, apply(&r_head, sub(pr, neck)));
            pl = add(neck, apply(&r_head, sub(pl, neck)));
        }
        coords.row_mut(i).copy_from_slice(&pr);
        coords.row_mut(i + half).copy_from_slice(&pl);
    }
    let sym = IndexMap::new((0..n).map(|i| if i < half { i + half } else { i - half }).collect(), n)?;
    Ok((PointCloud::new(coords, label)?, sym))
}

/// Template `template_seed` in the random pose `pose_seed`.
pub fn gen_shape(template_seed: u64, pose_seed: u64, n: usize) -> Result<(PointCloud, IndexMap)> {
    let label = format!("t{template_seed}_p{pose_seed}");
    gen_shape_posed(template_seed, &Pose::random(pose_seed), n, &label)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Partiality {
    #[default]
    None,
    Cut,
    Hole,
}

impl FromStr for Partiality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Partiality::None),
            "cut" => Ok(Partiality::Cut),
            "hole" => Ok(Partiality::Hole),
            other => Err(Error::Contract(format!("unknown partiality '{other}'"))),
        }
    }
}

impl fmt::Display for Partiality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partiality::None => "none",
            Partiality::Cut => "cut",
            Partiality::Hole => "hole",
        })
    }
}

/// Removed fraction ranges for the partial generators.
pub const CUT_FRACTION: (f64, f64) = (0.25, 0.45);
pub const HOLE_COUNT: (usize, usize) = (6, 10);
pub const HOLE_FRACTION: (f64, f64) = (0.03, 0.06);
pub const MAX_REMOVED_FRACTION: f64 = 0.70;

/// A generated pair plus the parameters that produced it.
#[derive(Clone, Debug)]
pub struct GeneratedPair {
    pub sample: ShapePairSample,
    pub template_seed: u64,
    pub pose_seeds: (u64, u64),
    pub partial: Partiality,
    pub removed_fraction: f64,
}

fn removal_mask(full: &PointCloud, partial: Partiality, rng: &mut ChaCha8Rng) -> Result<Vec<bool>> {
    let n = full.len();
    let mut removed = vec![false; n];
    match partial {
        Partiality::None => {}
        Partiality::Cut => {
            let normal = unit_vector(rng);
            let lo = (CUT_FRACTION.0 * n as f64).floor() as usize + 1;
            let hi = (CUT_FRACTION.1 * n as f64).ceil() as usize - 1;
            let frac = rng.gen_range(CUT_FRACTION.0..CUT_FRACTION.1);
            let m = ((frac * n as f64).round() as usize).clamp(lo, hi);
            let mut proj: Vec<(f64, usize)> = (0..n)
                .map(|i| {
                    let p = full.point(i);
                    (p[0] * normal[0] + p[1] * normal[1] + p[2] * normal[2], i)
                })
                .collect();
            proj.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, i) in proj.iter().take(m) {
                removed[i] = true;
            }
        }
        Partiality::Hole => {
            let geo = geodesics(full, DEFAULT_KNN)?;
            let holes = rng.gen_range(HOLE_COUNT.0..=HOLE_COUNT.1);
            for _ in 0..holes {
                let alive: Vec<usize> = (0..n).filter(|&i| !removed[i]).collect();
                let centre = alive[rng.gen_range(0..alive.len())];
                let frac = rng.gen_range(HOLE_FRACTION.0..=HOLE_FRACTION.1);
                let m = ((frac * n as f64).round() as usize).max(1).min(alive.len());
                let row = geo.row(centre);
                let mut by_dist: Vec<usize> = alive;
                by_dist.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
                for &i in by_dist.iter().take(m) {
                    removed[i] = true;
                }
            }
        }
    }
    Ok(removed)
}

/// Two poses of template `template_seed`. With partiality, `x` is the pose-A
/// shape with regions removed and `map_xy` sends each surviving point to its
/// index on the full pose-B shape `y`.
pub fn gen_pair(
    template_seed: u64,
    pose_seeds: (u64, u64),
    n: usize,
    partial: Partiality,
    seed: u64,
) -> Result<GeneratedPair> {
    let (full_x, sym) = gen_shape(template_seed, pose_seeds.0, n)?;
    let (y, sym_y) = gen_shape(template_seed, pose_seeds.1, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let removed = removal_mask(&full_x, partial, &mut rng)?;
    let kept: Vec<usize> = (0..n).filter(|&i| !removed[i]).collect();
    let removed_fraction = (n - kept.len()) as f64 / n as f64;
    if removed_fraction > MAX_REMOVED_FRACTION || kept.len() < MIN_POINTS {
        return Err(Error::Degenerate(format!(
            "{partial} removed {:.1}% of {n} points",
            removed_fraction * 100.0
        )));
    }

    let mut position = vec![usize::MAX; n];
    for (k, &i) in kept.iter().enumerate() {
        position[i] = k;
    }
    let sym_x_targets = kept
        .iter()
        .map(|&i| {
            let partner = sym.get(i);
            if position[partner] != usize::MAX {
                return position[partner];
            }
            let p = full_x.point(partner);
            let mut best = (f64::INFINITY, 0);
            for (k, &j) in kept.iter().enumerate() {
                let q = full_x.point(j);
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d < best.0 {
                    best = (d, k);
                }
            }
            best.1
        })
        .collect();

    let mut x = full_x.select(&kept)?;
    if partial != Partiality::None {
        x.set_label(format!("{}_{partial}", full_x.label()));
    }
    let sample = ShapePairSample {
        map_xy: IndexMap::new(kept.clone(), n)?,
        sym_x: IndexMap::new(sym_x_targets, kept.len())?,
        sym_y,
        x,
        y,
    };
    sample.validate()?;
    Ok(GeneratedPair {
        sample,
        template_seed,
        pose_seeds,
        partial,
        removed_fraction,
    })
}

/// `pairs` generated pairs, each from its own template, derived from `seed`.
pub fn gen_dataset(pairs: usize, n: usize, partial: Partiality, seed: u64) -> Result<Vec<GeneratedPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .map(|_| {
            let template: u64 = rng.gen();
            let poses = (rng.gen(), rng.gen());
            let cut_seed: u64 = rng.gen();
            gen_pair(template, poses, n, partial, cut_seed)
        })
        .collect()
}
