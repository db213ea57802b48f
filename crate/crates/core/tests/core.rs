use ifebreak::linalg::{composite_residual, norms, svd_full, svd_truncated};
use ifebreak::mc::rng_for;
use ifebreak::{CoefSet, Mat, PanelData};
use proptest::prelude::*;
use rand::Rng;

fn random(seed: u64, n: usize, t: usize) -> Mat {
    let mut rng = rng_for(seed, 0);
    Mat::from_fn(n, t, |_, _| rng.gen_range(-1.0..1.0))
}

fn dense_singular_values(m: &Mat) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

#[test]
fn residual_of_zero_coefs_is_y() {
    let y = random(1, 3, 5);
    let panel = PanelData::new(y.clone(), vec![random(2, 3, 5)]).unwrap();
    let r = composite_residual(&panel, &CoefSet::zeros(1, 3, 5)).unwrap();
    assert_eq!(r, y);
}

#[test]
fn residual_exact_fit_without_regressors() {
    let y = random(3, 4, 4);
    let panel = PanelData::new(y.clone(), vec![]).unwrap();
    let r = composite_residual(&panel, &CoefSet::new(vec![y]).unwrap()).unwrap();
    assert!(r.iter().all(|&v| v == 0.0));
}

#[test]
fn residual_matches_scalar_loop() {
    let (y, x1, x2) = (random(4, 3, 4), random(5, 3, 4), random(6, 3, 4));
    let th: Vec<Mat> = (0..3).map(|j| random(10 + j, 3, 4)).collect();
    let panel = PanelData::from_parts(y.clone(), vec![x1.clone(), x2.clone()]).unwrap();
    let r = composite_residual(&panel, &CoefSet::new(th.clone()).unwrap()).unwrap();
    for i in 0..3 {
        for t in 0..4 {
            let want = y[(i, t)] - th[0][(i, t)] - x1[(i, t)] * th[1][(i, t)] - x2[(i, t)] * th[2][(i, t)];
            assert!((r[(i, t)] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn residual_shape_mismatch() {
    let panel = PanelData::new(random(1, 3, 5), vec![random(2, 3, 5)]).unwrap();
    assert!(composite_residual(&panel, &CoefSet::zeros(2, 3, 5)).is_err());
    assert!(composite_residual(&panel, &CoefSet::zeros(1, 3, 4)).is_err());
}

#[test]
fn panel_rejects_non_finite_and_small() {
    let mut y = random(1, 3, 5);
    y[(1, 1)] = f64::NAN;
    assert!(PanelData::new(y, vec![]).is_err());
    assert!(PanelData::new(random(1, 1, 5), vec![]).is_err());
    assert!(PanelData::new(random(1, 3, 3), vec![]).is_err());
    assert!(PanelData::new(random(1, 3, 5), vec![random(1, 3, 6)]).is_err());
}

#[test]
fn norms_of_identity_and_rank_one() {
    let n = norms(&Mat::identity(2, 2)).unwrap();
    assert!((n.frobenius - 2f64.sqrt()).abs() < 1e-12);
    assert!((n.operator - 1.0).abs() < 1e-12);
    assert!((n.nuclear - 2.0).abs() < 1e-12);
    assert_eq!(n.max_abs, 1.0);

    let u = nalgebra::DVector::from_vec(vec![0.6, 0.8, 0.0]);
    let v = nalgebra::DVector::from_vec(vec![0.0, 1.0]);
    let n = norms(&(&u * v.transpose())).unwrap();
    assert!((n.operator - 1.0).abs() < 1e-12);
    assert!((n.nuclear - 1.0).abs() < 1e-12);

    let mut bad = Mat::zeros(2, 2);
    bad[(0, 1)] = f64::INFINITY;
    assert!(norms(&bad).is_err());
}

#[test]
fn nuclear_norm_matches_dense_svd() {
    let m = random(7, 4, 3);
    let want: f64 = dense_singular_values(&m).iter().sum();
    assert!((norms(&m).unwrap().nuclear - want).abs() < 1e-12);
}

#[test]
fn diagonal_truncation() {
    let m = Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
    let t = svd_truncated(&m, 1).unwrap();
    assert!((t.s[0] - 3.0).abs() < 1e-14);
    assert!((t.u[(0, 0)] - 1.0).abs() < 1e-14 && t.u[(1, 0)].abs() < 1e-14);
    assert!((t.v[(0, 0)] - 1.0).abs() < 1e-14 && t.v[(1, 0)].abs() < 1e-14);
    assert_eq!(svd_truncated(&m, 0).unwrap().rank(), 0);
    assert!(svd_truncated(&m, 3).is_err());
}

#[test]
fn full_rank_reconstructs() {
    let m = random(8, 6, 4);
    let t = svd_truncated(&m, 4).unwrap();
    assert!((t.reconstruct() - &m).norm() < 1e-10);
}

#[test]
fn eckart_young_error() {
    let m = random(9, 5, 4);
    let s = dense_singular_values(&m);
    let t = svd_truncated(&m, 2).unwrap();
    let want = (s[2] * s[2] + s[3] * s[3]).sqrt();
    assert!(((t.reconstruct() - &m).norm() - want).abs() < 1e-10);
}

fn arb_matrix() -> impl Strategy<Value = Mat> {
    (2usize..7, 2usize..7, any::<u64>()).prop_map(|(n, t, seed)| random(seed, n, t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_invariants(m in arb_matrix()) {
        let t = svd_full(&m);
        let k = t.rank();
        prop_assert!((t.u.transpose() * &t.u - Mat::identity(k, k)).amax() < 1e-10);
        prop_assert!((t.v.transpose() * &t.v - Mat::identity(k, k)).amax() < 1e-10);
        for w in t.s.as_slice().windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        prop_assert!(t.s.iter().all(|&s| s >= 0.0));
        for c in 0..k {
            let col = t.u.column(c);
            let big = col.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            prop_assert!(big >= 0.0);
        }
    }

    #[test]
    fn truncation_error_nonincreasing_in_rank(m in arb_matrix()) {
        let k = m.nrows().min(m.ncols());
        let mut last = f64::INFINITY;
        for r in 0..=k {
            let t = svd_truncated(&m, r).unwrap();
            let err = if r == 0 { m.norm() } else { (t.reconstruct() - &m).norm() };
            prop_assert!(err <= last + 1e-12);
            last = err;
        }
    }

    #[test]
    fn truncation_is_deterministic(m in arb_matrix(), r in 0usize..3) {
        let r = r.min(m.nrows().min(m.ncols()));
        let a = svd_truncated(&m, r).unwrap();
        let b = svd_truncated(&m, r).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn residual_is_affine(seed in any::<u64>(), n in 2usize..5, t in 4usize..7) {
        let panel = PanelData::new(random(seed, n, t), vec![random(seed ^ 1, n, t), random(seed ^ 2, n, t)]).unwrap();
        let c1 = CoefSet::new((0..3).map(|j| random(seed ^ (10 + j), n, t)).collect()).unwrap();
        let c2 = CoefSet::new((0..3).map(|j| random(seed ^ (20 + j), n, t)).collect()).unwrap();
        let sum = CoefSet::new(c1.thetas().iter().zip(c2.thetas()).map(|(a, b)| a + b).collect()).unwrap();
        let lhs = composite_residual(&panel, &sum).unwrap();
        let rhs = composite_residual(&panel, &c1).unwrap() + composite_residual(&panel, &c2).unwrap() - panel.y();
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }
}
