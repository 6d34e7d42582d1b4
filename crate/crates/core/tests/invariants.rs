use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use canon_core::diffmat::{Mat, Tape};
use canon_core::eval::{evaluate_pair, predict_map, PointEmbedder, RawCoordinates};
use canon_core::geom::io::{load_cloud, load_map, save_cloud, save_map};
use canon_core::geom::{
    flip, gen_pair, geodesics, random_rotation_within, subsample, Axis, IndexMap, Partiality, PointCloud, MAX_TILT_DEG,
};
use canon_core::net::init_encoder;

fn cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(Mat::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0)), "p").unwrap()
}

fn perm(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

fn axis(i: u8) -> Axis {
    [Axis::X, Axis::Y, Axis::Z][i as usize % 3]
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn flip_twice_is_identity(n in 4usize..60, seed in any::<u64>(), a in 0u8..3) {
        let p = cloud(n, seed);
        let back = flip(&flip(&p, axis(a)), axis(a));
        prop_assert!(back.coords().sub(p.coords()).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn rotation_is_proper_and_bounded(seed in any::<u64>(), yaw in 0.0f64..180.0) {
        let r = random_rotation_within(seed, yaw);
        let rtr = r.transpose().matmul(&r).unwrap();
        prop_assert!(rtr.sub(&Mat::eye(3)).unwrap().max_abs() < 1e-12);
        let det = r.get(0, 0) * (r.get(1, 1) * r.get(2, 2) - r.get(1, 2) * r.get(2, 1))
            - r.get(0, 1) * (r.get(1, 0) * r.get(2, 2) - r.get(1, 2) * r.get(2, 0))
            + r.get(0, 2) * (r.get(1, 0) * r.get(2, 1) - r.get(1, 1) * r.get(2, 0));
        prop_assert!((det - 1.0).abs() < 1e-12);
        // angle of a composition is at most the sum of the angles
        let trace = r.get(0, 0) + r.get(1, 1) + r.get(2, 2);
        let angle = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees();
        prop_assert!(angle <= yaw + MAX_TILT_DEG + 1e-6);
    }

    #[test]
    fn map_composition_matches_pointwise(n in 1usize..40, s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = IndexMap::new(perm(n, s1), n).unwrap();
        let b = IndexMap::new(perm(n, s2), n).unwrap();
        let ab = a.then(&b).unwrap();
        for i in 0..n {
            prop_assert_eq!(ab.get(i), b.get(a.get(i)));
        }
        let as_matrix = a.to_matrix().matmul(&b.to_matrix()).unwrap();
        prop_assert_eq!(as_matrix, ab.to_matrix());
    }

    #[test]
    fn softmax_of_distances_is_row_stochastic(n in 1usize..20, m in 1usize..20, seed in any::<u64>()) {
        let a = cloud(n.max(4), seed).coords().clone();
        let b = cloud(m.max(4), seed ^ 7).coords().scale(5.0);
        let mut tape = Tape::new();
        let (ia, ib) = (tape.leaf(a).unwrap(), tape.leaf(b).unwrap());
        let d = tape.pairwise_distance(ia, ib).unwrap();
        let s = tape.row_softmax_neg(d).unwrap();
        let s = tape.value(s);
        for r in 0..s.rows() {
            prop_assert!(s.row(r).iter().all(|&v| v >= 0.0));
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn encoder_is_permutation_equivariant(n in 4usize..40, seed in any::<u64>(), k in 2usize..8) {
        let params = init_encoder(k, seed % 1000).unwrap();
        let p = cloud(n, seed);
        let order = perm(n, seed ^ 3);
        let q = p.select(&order).unwrap();
        let (ep, eq) = (params.embed(&p).unwrap(), params.embed(&q).unwrap());
        let permuted = ep.select_rows(&order).unwrap();
        prop_assert!(permuted.sub(&eq).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn geodesics_are_a_metric(n in 10usize..50, seed in any::<u64>()) {
        let g = match geodesics(&cloud(n, seed), 8) {
            Ok(g) => g,
            Err(_) => return Ok(()),
        };
        for i in 0..n {
            prop_assert_eq!(g.distance(i, i), 0.0);
            for j in 0..n {
                prop_assert!((g.distance(i, j) - g.distance(j, i)).abs() < 1e-12);
                // the estimate is a largest eccentricity, so at least half the true diameter
                prop_assert!(g.distance(i, j) <= 2.0 * g.diameter() + 1e-12);
                let k = (i * 7 + j) % n;
                prop_assert!(g.distance(i, k) <= g.distance(i, j) + g.distance(j, k) + 1e-12);
            }
        }
    }

    #[test]
    fn geodesic_errors_are_normalized(n in 10usize..40, seed in any::<u64>()) {
        let g = match geodesics(&cloud(n, seed), 8) {
            Ok(g) => g,
            Err(_) => return Ok(()),
        };
        let gt = IndexMap::identity(n);
        let pred = IndexMap::new(perm(n, seed ^ 5), n).unwrap();
        let r = evaluate_pair(&pred, &gt, &g).unwrap();
        prop_assert!(r.errors.iter().all(|&e| (0.0..=2.0 + 1e-12).contains(&e)));
        let mean = r.errors.iter().sum::<f64>() / n as f64;
        prop_assert!((r.mean_x100 - 100.0 * mean).abs() < 1e-9);
        prop_assert!(r.cdf.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        prop_assert_eq!(r.cdf.last().unwrap().1, 1.0);
        prop_assert_eq!(evaluate_pair(&gt, &gt, &g).unwrap().mean_x100, 0.0);
    }
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn generated_pairs_carry_consistent_ground_truth(seed in 0u64..10_000, partial in 0u8..3) {
        let partial = [Partiality::None, Partiality::Cut, Partiality::Hole][partial as usize];
        let g = gen_pair(seed, (seed + 1, seed + 2), 600, partial, seed).unwrap();
        let s = &g.sample;
        prop_assert!(s.validate().is_ok());
        prop_assert!(s.sym_y.is_involution());
        prop_assert!(s.map_xy.is_injective());
        if partial == Partiality::None {
            prop_assert!(s.sym_x.is_involution());
            prop_assert_eq!(g.removed_fraction, 0.0);
            // mapping then symmetrizing equals symmetrizing then mapping
            prop_assert_eq!(s.map_xy.then(&s.sym_y).unwrap(), s.sym_x.then(&s.map_xy).unwrap());
        }
        let sub = subsample(s, 64, seed).unwrap();
        prop_assert!(sub.validate().is_ok());
        prop_assert_eq!(sub.x.len(), 64);
    }

    #[test]
    fn files_round_trip(n in 4usize..50, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let p = cloud(n, seed);
        let path = dir.path().join("p.xyz");
        save_cloud(&path, &p).unwrap();
        let loaded = load_cloud(&path).unwrap();
        prop_assert_eq!(loaded.coords(), p.coords());
        let m = IndexMap::new(perm(n, seed), n).unwrap();
        let path = dir.path().join("m.map");
        save_map(&path, &m).unwrap();
        prop_assert_eq!(load_map(&path).unwrap(), m);
    }

    #[test]
    fn raw_matching_of_a_cloud_with_itself_is_exact(n in 4usize..60, seed in any::<u64>()) {
        let p = cloud(n, seed);
        prop_assert_eq!(RawCoordinates.embed(&p).unwrap(), p.coords().clone());
        prop_assert_eq!(predict_map(&RawCoordinates, &p, &p).unwrap(), IndexMap::identity(n));
    }
}
