use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::gradcheck::{random_mat, relative_error};

fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
}

fn to_na(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

fn from_na(m: &DMatrix<f64>) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
}

/// Least squares through an SVD of the stacked system `[a; sqrt(eps) I]`.
fn ridge_oracle(a: &Mat, b: &Mat, eps: f64) -> Mat {
    let (n, k) = a.shape();
    let m = b.cols();
    let mut big_a = DMatrix::zeros(n + k, k);
    let mut big_b = DMatrix::zeros(n + k, m);
    big_a.view_mut((0, 0), (n, k)).copy_from(&to_na(a));
    big_b.view_mut((0, 0), (n, m)).copy_from(&to_na(b));
    for i in 0..k {
        big_a[(n + i, i)] = eps.sqrt();
    }
    let svd = big_a.svd(true, true);
    from_na(&svd.solve(&big_b, 1e-14).unwrap())
}

#[test]
fn matmul_identity() {
    let mut tape = Tape::new();
    let m = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
    let i = tape.leaf(Mat::eye(3)).unwrap();
    let x = tape.leaf(m.clone()).unwrap();
    let y = tape.matmul(i, x).unwrap();
    assert_eq!(tape.value(y), &m);
}

#[test]
fn frobenius_three_four_five() {
    let mut tape = Tape::new();
    let a = tape.leaf(Mat::from_rows(&[[3.0, 4.0]]).unwrap()).unwrap();
    let n = tape.frobenius_norm(a).unwrap();
    assert_eq!(tape.scalar(n), 5.0);
}

#[test]
fn frobenius_of_product_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_mat(&mut rng, 4, 3);
    let b = random_mat(&mut rng, 3, 2);
    let err = relative_error(
        &[a, b],
        |t, ids| {
            let p = t.matmul(ids[0], ids[1])?;
            t.frobenius_norm(p)
        },
        None,
        0,
    )
    .unwrap();
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn shape_and_index_errors() {
    let mut tape = Tape::new();
    let a = tape.leaf(Mat::zeros(2, 3)).unwrap();
    let b = tape.leaf(Mat::zeros(2, 3)).unwrap();
    assert!(matches!(tape.matmul(a, b), Err(Error::Dimension { .. })));
    assert!(matches!(tape.gather_rows(a, &[0, 2]), Err(Error::Index { .. })));
    let c = tape.leaf(Mat::zeros(2, 2)).unwrap();
    assert!(matches!(tape.pairwise_distance(a, c), Err(Error::Dimension { .. })));
    assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
    assert!(tape.leaf(Mat::scalar(f64::NAN)).is_err());
}

#[test]
fn pairwise_distance_examples() {
    let mut tape = Tape::new();
    let a = tape.leaf(Mat::from_rows(&[[0.0, 0.0]]).unwrap()).unwrap();
    let b = tape.leaf(Mat::from_rows(&[[3.0, 4.0]]).unwrap()).unwrap();
    let d = tape.pairwise_distance(a, b).unwrap();
    assert_eq!(tape.value(d).data(), &[5.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = tape.leaf(random_mat(&mut rng, 6, 4)).unwrap();
    let dd = tape.pairwise_distance(x, x).unwrap();
    for i in 0..6 {
        assert_eq!(tape.value(dd).get(i, i), 0.0);
    }
}

#[test]
fn pairwise_distance_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_mat(&mut rng, 5, 3);
    let b = random_mat(&mut rng, 5, 3);
    let w = random_mat(&mut rng, 5, 5);
    let err = relative_error(
        &[a, b],
        move |t, ids| {
            let d = t.pairwise_distance(ids[0], ids[1])?;
            let w = t.constant(w.clone())?;
            let p = t.matmul_nt(d, w)?;
            t.sum_all(p)
        },
        None,
        0,
    )
    .unwrap();
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn coincident_rows_have_finite_gradient() {
    let mut tape = Tape::new();
    let a = tape.leaf(Mat::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap()).unwrap();
    let d = tape.pairwise_distance(a, a).unwrap();
    let s = tape.sum_all(d).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.get(a).unwrap().is_finite());
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let d = tape.leaf(Mat::from_rows(&[[5.0, 5.0, 5.0]]).unwrap()).unwrap();
    let s = tape.row_softmax_neg(d).unwrap();
    for v in tape.value(s).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let d = tape.leaf(Mat::from_rows(&[[0.0, 10.0]]).unwrap()).unwrap();
    let s = tape.row_softmax_neg(d).unwrap();
    // 1 / (1 + e^-10) and e^-10 / (1 + e^-10)
    let v = tape.value(s);
    assert!((v.get(0, 0) - 0.999_954_602_131_297_6).abs() < 1e-12);
    assert!((v.get(0, 1) - 4.539_786_870_243_439e-5).abs() < 1e-15);
}

#[test]
fn softmax_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = random_mat(&mut rng, 4, 6);
    let w = random_mat(&mut rng, 4, 6);
    let err = relative_error(
        &[d],
        move |t, ids| {
            let s = t.row_softmax_neg(ids[0])?;
            let w = t.constant(w.clone())?;
            let p = t.matmul_nt(s, w)?;
            t.sum_all(p)
        },
        None,
        0,
    )
    .unwrap();
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn ridge_identity_and_exact_cases() {
    let mut tape = Tape::new();
    let b_val = Mat::from_rows(&[[1.5, -2.0], [0.25, 3.0], [7.0, 0.0]]).unwrap();
    let a = tape.leaf(Mat::eye(3)).unwrap();
    let b = tape.leaf(b_val.clone()).unwrap();
    let x = tape.ridge_solve(a, b, 0.0).unwrap();
    assert!(close(tape.value(x), &b_val, 1e-15));

    let a = tape.leaf(Mat::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap()).unwrap();
    let b = tape.leaf(Mat::from_rows(&[[1.0], [2.0]]).unwrap()).unwrap();
    let x = tape.ridge_solve(a, b, 0.0).unwrap();
    assert!(close(tape.value(x), &Mat::from_rows(&[[1.0], [1.0]]).unwrap(), 1e-15));
}

#[test]
fn ridge_matches_least_squares_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &eps in &[0.0, 1e-6, 0.1] {
        let a_val = random_mat(&mut rng, 30, 10);
        let b_val = random_mat(&mut rng, 30, 4);
        let mut tape = Tape::new();
        let a = tape.leaf(a_val.clone()).unwrap();
        let b = tape.leaf(b_val.clone()).unwrap();
        let x = tape.ridge_solve(a, b, eps).unwrap();
        let oracle = ridge_oracle(&a_val, &b_val, eps);
        assert!(close(tape.value(x), &oracle, 1e-8), "eps {eps}");
    }
}

#[test]
fn ridge_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_mat(&mut rng, 30, 10);
    let b = random_mat(&mut rng, 30, 4);
    let w = random_mat(&mut rng, 10, 4);
    let err = relative_error(
        &[a, b],
        move |t, ids| {
            let x = t.ridge_solve(ids[0], ids[1], 1e-6)?;
            let w = t.constant(w.clone())?;
            let p = t.matmul_tn(x, w)?;
            t.sum_all(p)
        },
        None,
        0,
    )
    .unwrap();
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn ridge_singular_system_is_reported() {
    let mut tape = Tape::new();
    let a = tape
        .leaf(Mat::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).unwrap())
        .unwrap();
    let b = tape.leaf(Mat::zeros(3, 1)).unwrap();
    match tape.ridge_solve(a, b, 0.0) {
        Err(Error::Singular { solve, .. }) => assert!(solve.contains("ridge_solve")),
        other => panic!("expected singular error, got {other:?}"),
    }
}

#[test]
fn ridge_exact_inverse_on_square_full_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        // diagonally dominant keeps the conditioning benign
        let mut a_val = random_mat(&mut rng, 5, 5);
        for i in 0..5 {
            a_val.set(i, i, a_val.get(i, i) + 4.0);
        }
        let x_true = random_mat(&mut rng, 5, 3);
        let b_val = a_val.matmul(&x_true).unwrap();
        let mut tape = Tape::new();
        let a = tape.leaf(a_val).unwrap();
        let b = tape.leaf(b_val).unwrap();
        let x = tape.ridge_solve(a, b, 0.0).unwrap();
        assert!(close(tape.value(x), &x_true, 1e-10));
    }
}

#[test]
fn backward_of_sum_is_ones_and_independent_leaf_absent() {
    let mut tape = Tape::new();
    let a = tape.leaf(Mat::from_rows(&[[1.0, -2.0], [3.0, 0.5]]).unwrap()).unwrap();
    let unused = tape.leaf(Mat::eye(2)).unwrap();
    let s = tape.sum_all(a).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(a).unwrap(), &Mat::filled(2, 2, 1.0));
    assert!(g.get(unused).is_none());
    assert_eq!(g.get_or_zeros(unused, (2, 2)), Mat::zeros(2, 2));
}

#[test]
fn zero_scale_cuts_gradient() {
    let mut tape = Tape::new();
    let a = tape.leaf(Mat::eye(2)).unwrap();
    let z = tape.scale(a, 0.0).unwrap();
    let s = tape.sum_all(z).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.get(a).is_none());
}

#[test]
fn network_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_mat(&mut rng, 6, 3);
    let w = random_mat(&mut rng, 4, 3);
    let bias = random_mat(&mut rng, 1, 4);
    let probe = random_mat(&mut rng, 6, 8);
    let err = relative_error(
        &[x, w, bias],
        move |t, ids| {
            let h = t.matmul_nt(ids[0], ids[1])?;
            let h = t.add_row(h, ids[2])?;
            let h = t.relu(h)?;
            let pooled = t.max_pool_rows(h)?;
            let tiled = t.broadcast_rows(pooled, 6)?;
            let cat = t.concat_cols(h, tiled)?;
            let probe = t.constant(probe.clone())?;
            let p = t.matmul_tn(cat, probe)?;
            let tr = t.transpose(p)?;
            let g = t.gather_rows(tr, &[0, 3, 3, 7])?;
            let sc = t.scale(g, 0.7)?;
            let diff = t.sub(sc, g)?;
            let both = t.add(diff, g)?;
            t.sum_squares(both)
        },
        None,
        0,
    )
    .unwrap();
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn max_pool_ties_route_to_lowest_row() {
    let mut tape = Tape::new();
    let a = tape
        .leaf(Mat::from_rows(&[[1.0, 0.0], [1.0, 2.0], [0.5, 2.0]]).unwrap())
        .unwrap();
    let p = tape.max_pool_rows(a).unwrap();
    let s = tape.sum_all(p).unwrap();
    let g = tape.backward(s).unwrap();
    let ga = g.get(a).unwrap();
    assert_eq!(ga, &Mat::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap());
}

#[test]
fn tape_replay_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::new();
        let a = tape.leaf(random_mat(&mut rng, 12, 4)).unwrap();
        let b = tape.leaf(random_mat(&mut rng, 12, 4)).unwrap();
        let c = tape.ridge_solve(a, b, 1e-6).unwrap();
        let ah = tape.matmul_nt(a, c).unwrap();
        let d = tape.pairwise_distance(ah, b).unwrap();
        let s = tape.row_softmax_neg(d).unwrap();
        let f = tape.frobenius_norm(s).unwrap();
        let g = tape.backward(f).unwrap();
        (tape.scalar(f), g.get(a).unwrap().clone(), g.get(b).unwrap().clone())
    };
    let (f1, ga1, gb1) = run();
    let (f2, ga2, gb2) = run();
    assert_eq!(f1.to_bits(), f2.to_bits());
    assert!(ga1
        .data()
        .iter()
        .zip(ga2.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(gb1
        .data()
        .iter()
        .zip(gb2.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn kink_margin_reports_nearest_kink() {
    let mut t = Tape::new();
    assert_eq!(t.kink_margin(), f64::INFINITY);
    let a = t.leaf(Mat::from_rows(&[[0.5, -0.02], [0.3, 1.0]]).unwrap()).unwrap();
    t.relu(a).unwrap();
    assert!((t.kink_margin() - 0.02).abs() < 1e-15);
    let b = t.leaf(Mat::from_rows(&[[1.0, 4.0], [1.005, 2.0]]).unwrap()).unwrap();
    t.max_pool_rows(b).unwrap();
    assert!((t.kink_margin() - 0.005).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..6,
        cols in 1usize..8,
        seed in any::<u64>(),
        spread in 0.1f64..30.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_mat(&mut rng, rows, cols).map(|v| (v + 1.0) * spread);
        let mut tape = Tape::new();
        let d = tape.leaf(d).unwrap();
        let s = tape.row_softmax_neg(d).unwrap();
        let s = tape.value(s);
        for r in 0..rows {
            let total: f64 = s.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            for &v in s.row(r) {
                prop_assert!(v > 0.0 && v <= 1.0);
                if cols > 1 { prop_assert!(v < 1.0 || spread > 20.0); }
            }
        }
    }
}
