mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::*;
use nucsel_core::cur::*;
use nucsel_core::gen::random_sparse;
use nucsel_core::linops::SparseMat;
use nucsel_core::select::Method;

/// Orthonormal basis for the range of `m`.
fn range_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, false);
    let top = svd.singular_values.max();
    let u = svd.u.unwrap();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-12 * top)
        .collect();
    u.select_columns(&keep)
}

/// ‖A − C C⁺ A R⁺ R‖_F with C = A[:, J], R = A[I, :], assembled densely
/// through orthogonal projectors.
fn direct_error(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    let all_r: Vec<usize> = (0..a.nrows()).collect();
    let all_c: Vec<usize> = (0..a.ncols()).collect();
    let qc = range_basis(&sub(a, &all_r, cols));
    let qr = range_basis(&sub(a, rows, &all_c).transpose());
    (a - &qc * (qc.transpose() * a * &qr) * qr.transpose()).norm()
}

#[test]
fn gram_operators_match_dense() {
    let a = SparseMat::identity(3);
    let (ata, aat) = gram_operators(&a).unwrap();
    let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    assert_eq!(ata.k_op.apply(&x), x);
    assert_eq!(aat.k_op.apply(&x), x);

    let a = random_sparse(20, 15, 0.3, 61).unwrap();
    let d = a.to_dense();
    let (ata, aat) = gram_operators(&a).unwrap();
    let mut r = rng(61);
    for _ in 0..10 {
        let x = gaussian(&mut r, 15, 1).column(0).into_owned();
        let want = d.transpose() * &d * &x;
        assert!((ata.k_op.apply(&x) - &want).norm() <= 1e-12 * want.norm());
        let cc = ata.c_op.apply(&(&d * &x));
        assert!((cc - &want).norm() <= 1e-12 * want.norm());
        let y = gaussian(&mut r, 20, 1).column(0).into_owned();
        let want = &d * d.transpose() * &y;
        assert!((aat.k_op.apply(&y) - &want).norm() <= 1e-12 * want.norm());
    }
}

#[test]
fn orthogonal_matrix_reconstructs_exactly() {
    let mut r = rng(62);
    let q = gaussian(&mut r, 7, 7).qr().q();
    let a = SparseMat::from_dense(&q, 0.0);
    let res = cur_decompose(&a, 7, 7, Method::Nuclear, CurMode::Deterministic, 0).unwrap();
    assert!(res.frobenius_error <= 1e-8 * q.norm());
}

#[test]
fn closed_form_matches_assembly() {
    let mut r = rng(63);
    for seed in 0..10 {
        let d = gaussian(&mut r, 12, 9);
        let a = SparseMat::from_dense(&d, 0.0);
        for mode in [CurMode::Deterministic, CurMode::MatrixFree { z: 50 }] {
            let res = cur_decompose(&a, 3, 3, Method::Nuclear, mode, seed).unwrap();
            let want = direct_error(&d, &res.row_indices, &res.col_indices);
            assert!(rel(res.frobenius_error, want) < 1e-8, "{} vs {want}", res.frobenius_error);
            let dense = (&d - res.assemble_dense(&a).unwrap()).norm();
            assert!(rel(dense, want) < 1e-8);
            assert!(triangle_bound_check(&res, &a));
        }
    }
}

#[test]
fn rank_two_is_captured() {
    let mut r = rng(64);
    let u = gaussian(&mut r, 15, 2);
    let v = gaussian(&mut r, 2, 11);
    let d = u * v;
    let a = SparseMat::from_dense(&d, 0.0);
    let res = cur_decompose(&a, 2, 2, Method::Nuclear, CurMode::Deterministic, 0).unwrap();
    assert!(res.frobenius_error <= 1e-8 * d.norm());
}

#[test]
fn cx_error_matches_least_squares() {
    let mut r = rng(65);
    let d = gaussian(&mut r, 10, 6);
    let a = SparseMat::from_dense(&d, 0.0);
    let all: Vec<usize> = (0..10).collect();
    let c = sub(&d, &all, &[0, 2]);
    let b = (c.transpose() * &c).try_inverse().unwrap() * c.transpose() * &d;
    let want = (&c * b - &d).norm_squared();
    assert!(rel(cx_error(&a, &[0, 2]).unwrap(), want) < 1e-9);
    assert!(cx_error(&a, &[0, 1, 2, 3, 4, 5]).unwrap() <= 1e-10 * d.norm_squared());
    assert!(rel(cx_error(&a, &[]).unwrap(), d.norm_squared()) < 1e-14);
}

#[test]
fn corrupted_core_fails_triangle_check() {
    let a = random_sparse(30, 25, 0.2, 66).unwrap();
    let mut res = cur_decompose(&a, 5, 5, Method::Nuclear, CurMode::Deterministic, 0).unwrap();
    assert!(triangle_bound_check(&res, &a));
    res.u_c *= 3.0;
    assert!(!triangle_bound_check(&res, &a));
}

#[test]
fn row_choice_ignores_column_order() {
    let a = random_sparse(25, 20, 0.3, 67).unwrap();
    let d = a.to_dense();
    let perm: Vec<usize> = (0..20).rev().collect();
    let all: Vec<usize> = (0..25).collect();
    let p = SparseMat::from_dense(&sub(&d, &all, &perm), 0.0);
    let r1 = cur_decompose(&a, 6, 4, Method::Nuclear, CurMode::Deterministic, 0).unwrap();
    let r2 = cur_decompose(&p, 6, 4, Method::Nuclear, CurMode::Deterministic, 0).unwrap();
    assert_eq!(r1.row_indices, r2.row_indices);
    for (x, y) in r1.row_selection.objective.iter().zip(&r2.row_selection.objective) {
        assert!(rel(*x, *y) < 1e-12);
    }
}

#[test]
fn prefix_errors_follow_truncation() {
    let a = random_sparse(40, 30, 0.15, 68).unwrap();
    let d = a.to_dense();
    let res = cur_decompose(&a, 6, 6, Method::Nuclear, CurMode::Deterministic, 0).unwrap();
    let errs = res.prefix_errors_sq(&a);
    for t in 1..=6 {
        let want = direct_error(&d, &res.row_indices[..t], &res.col_indices[..t]);
        assert!((errs[t - 1].sqrt() - want).abs() <= 1e-8 * d.norm(), "t={t}");
        let p = res.prefix(t, t);
        assert!((p.factored_error(&a) - want).abs() <= 1e-8 * d.norm());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn triangle_bound_always_holds(
        m in 5usize..40,
        n in 5usize..40,
        seed in any::<u64>(),
        k in 1usize..5,
        mi in 0usize..4,
    ) {
        let a = random_sparse(m, n, 0.3, seed).unwrap();
        let method = Method::ALL[mi];
        let kr = k.min(m);
        let kc = k.min(n);
        let res = cur_decompose(&a, kr, kc, method, CurMode::Deterministic, seed).unwrap();
        prop_assert!(triangle_bound_check(&res, &a));
        let nrm = a.frobenius_sq().sqrt();
        prop_assert!(res.frobenius_error <= nrm * (1.0 + 1e-8));
        let want = direct_error(&a.to_dense(), &res.row_indices, &res.col_indices);
        prop_assert!((res.frobenius_error - want).abs() <= 1e-8 * nrm);
    }
}
