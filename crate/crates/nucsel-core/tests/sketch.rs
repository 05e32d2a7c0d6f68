mod common;

use nalgebra::{DMatrix, DVector};

use common::*;
use nucsel_core::linops::{DenseOp, DenseSym, FactoredOperator, IdentityOp, SymOperator};
use nucsel_core::select::{nuclear_max, objective_eval, CholeskyState};
use nucsel_core::sketch::*;

fn diag531() -> FactoredOperator {
    let k = DenseSym::from_diag(&[5.0, 3.0, 1.0]);
    let c = DMatrix::from_diagonal(&DVector::from_vec(vec![5f64.sqrt(), 3f64.sqrt(), 1.0]));
    FactoredOperator::from_dense(k, c).unwrap()
}

/// Dense K with its symmetric square root as the factor.
fn dense_ops(k: &DenseSym) -> FactoredOperator {
    let e = k.matrix().clone().symmetric_eigen();
    let sq = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    let c = &e.eigenvectors * DMatrix::from_diagonal(&sq) * e.eigenvectors.transpose();
    FactoredOperator::from_dense(k.clone(), c).unwrap()
}

#[test]
fn identity_diagonal_mean_is_one() {
    let runs = 10_000;
    let mut sum = DVector::zeros(3);
    let mut sq = DVector::zeros(3);
    for s in 0..runs {
        let d = estimate_diag(&IdentityOp(3), 1, s).unwrap();
        sum += &d;
        sq += d.component_mul(&d);
    }
    for j in 0..3 {
        let mean = sum[j] / runs as f64;
        let var = sq[j] / runs as f64 - mean * mean;
        assert!((mean - 1.0).abs() <= 3.0 * (var / runs as f64).sqrt(), "entry {j}: {mean}");
    }
}

#[test]
fn diagonal_estimate_concentrates() {
    let mut r = rng(41);
    let y = gaussian(&mut r, 50, 20);
    let exact = (&y * y.transpose()).diagonal();
    let op = DenseOp(y);
    for s in 0..100 {
        let est = estimate_diag(&op, 400, s).unwrap();
        let worst = (0..50).map(|j| (est[j] - exact[j]).abs() / exact[j]).fold(0.0, f64::max);
        assert!(worst < 0.5, "seed {s}: {worst}");
    }
}

#[test]
fn diagonal_estimate_unbiased() {
    let mut r = rng(42);
    let y = gaussian(&mut r, 30, 10);
    let exact = (&y * y.transpose()).diagonal();
    let op = DenseOp(y);
    let runs = 10_000;
    let mut sum = DVector::zeros(30);
    let mut sq = DVector::zeros(30);
    for s in 0..runs {
        let d = estimate_diag(&op, 1, s).unwrap();
        sum += &d;
        sq += d.component_mul(&d);
    }
    let mut outside = 0;
    for j in 0..30 {
        let mean = sum[j] / runs as f64;
        let sd = ((sq[j] / runs as f64 - mean * mean) / runs as f64).sqrt();
        if (mean - exact[j]).abs() > 3.0 * sd {
            outside += 1;
        }
    }
    // 30 entries at 3σ: more than two misses would be a real bias.
    assert!(outside <= 2, "{outside} entries outside 3σ");
}

#[test]
fn scores_after_one_pivot_are_unbiased() {
    let mut r = rng(43);
    let k = sym(wishart(&mut r, 6, 6));
    let ops = dense_ops(&k);
    let mut st = CholeskyState::new_matrix_free(6, 2);
    st.pivot(2, &k.column(2)).unwrap();
    let kt = residual(k.matrix(), &[2]);
    let want_num = (&kt * &kt).diagonal();
    let want_den = kt.diagonal();
    let runs = 10_000u64;
    let (mut n1, mut n2, mut d1, mut d2) = (DVector::zeros(6), DVector::zeros(6), DVector::zeros(6), DVector::zeros(6));
    for s in 0..runs {
        let e = randomized_scores(&st, &ops, 1, (2 * s, 2 * s + 1)).unwrap();
        n1 += &e.numerator;
        n2 += e.numerator.component_mul(&e.numerator);
        d1 += &e.denominator;
        d2 += e.denominator.component_mul(&e.denominator);
    }
    let rn = runs as f64;
    let mut outside = 0;
    for j in (0..6).filter(|&j| j != 2) {
        for (s1, s2, want) in [(&n1, &n2, &want_num), (&d1, &d2, &want_den)] {
            let mean = s1[j] / rn;
            let sd = ((s2[j] / rn - mean * mean) / rn).sqrt();
            if (mean - want[j]).abs() > 3.0 * sd {
                outside += 1;
            }
        }
    }
    assert!(outside <= 1, "{outside} of 10 estimates outside 3σ");
    let e = randomized_scores(&st, &ops, 5, (1, 2)).unwrap();
    assert!(e.numerator[2].abs() < 1e-20 && e.denominator[2].abs() < 1e-20);
}

#[test]
fn diagonal_case_selected_reliably() {
    let ops = diag531();
    let hits = (0..1000)
        .filter(|&s| {
            let mut idx = nuclear_max_matrix_free(&ops, 2, MatrixFreeOptions::new(64, s)).unwrap().indices;
            idx.sort();
            idx == [0, 1]
        })
        .count();
    assert!(hits >= 990, "{hits}");
}

#[test]
fn z_one_gives_valid_run() {
    let ops = diag531();
    let res = nuclear_max_matrix_free(&ops, 3, MatrixFreeOptions::new(1, 5).with_trace(9.0)).unwrap();
    assert_eq!(res.len(), 3);
    assert!(res.gains.iter().all(|g| g.is_finite() && *g > 0.0));
    assert!((res.objective[2] - 9.0).abs() < 1e-12);
}

#[test]
fn matrix_free_diag_sampling_identity() {
    let k = DenseSym::identity(2);
    let ops = FactoredOperator::from_dense(k, DMatrix::identity(2, 2)).unwrap();
    let runs = 10_000;
    let zeros = (0..runs)
        .filter(|&s| diagonal_sample_matrix_free(&ops, 1, MatrixFreeOptions::new(8, s)).unwrap().indices[0] == 0)
        .count();
    assert!((zeros as f64 / runs as f64 - 0.5).abs() < 0.02);
}

#[test]
fn wide_sketch_sampling_matches_exact_diagonal() {
    let mut r = rng(44);
    let k = sym(wishart(&mut r, 8, 8));
    let ops = dense_ops(&k);
    let d = k.diag();
    let runs = 10_000;
    let mut hist = [0usize; 8];
    for s in 0..runs {
        let res = diagonal_sample_matrix_free(&ops, 1, MatrixFreeOptions::new(1000, s)).unwrap();
        hist[res.indices[0]] += 1;
    }
    let tv: f64 = (0..8).map(|j| (hist[j] as f64 / runs as f64 - d[j] / d.sum()).abs()).sum::<f64>() * 0.5;
    assert!(tv < 0.05, "total variation {tv}");
}

#[test]
fn wide_sketch_reproduces_deterministic_order() {
    // Pick a matrix whose exact score gaps are clear at every step.
    let mut r = rng(45);
    let (k, want) = loop {
        let k = sym(wishart(&mut r, 10, 10));
        let want = nuclear_max(&k, 3).unwrap().indices;
        let mut ok = true;
        for t in 0..3 {
            let kt = residual(k.matrix(), &want[..t]);
            let mut sc: Vec<f64> = (0..10)
                .filter(|j| !want[..t].contains(j))
                .map(|j| (&kt * &kt)[(j, j)] / kt[(j, j)])
                .collect();
            sc.sort_by(|a, b| b.total_cmp(a));
            ok &= sc[0] > 1.1 * sc[1];
        }
        if ok {
            break (k, want);
        }
    };
    let ops = dense_ops(&k);
    let hits = (0..100)
        .filter(|&s| nuclear_max_matrix_free(&ops, 3, MatrixFreeOptions::new(10_000, s)).unwrap().indices == want)
        .count();
    assert!(hits >= 99, "{hits}");
}

#[test]
fn matrix_free_gains_are_exact_and_nonnegative() {
    let mut r = rng(46);
    let k = sym(wishart(&mut r, 40, 15));
    let ops = dense_ops(&k);
    for run in [
        nuclear_max_matrix_free(&ops, 10, MatrixFreeOptions::new(50, 1)).unwrap(),
        diagonal_max_matrix_free(&ops, 10, MatrixFreeOptions::new(50, 2)).unwrap(),
        diagonal_sample_matrix_free(&ops, 10, MatrixFreeOptions::new(50, 3)).unwrap(),
        uniform_matrix_free(&ops, 10, MatrixFreeOptions::new(50, 4)).unwrap(),
    ] {
        for t in 0..run.len() {
            assert!(run.gains[t] >= -1e-10 * k.trace());
            let want = objective_eval(&k, &run.indices[..=t]).unwrap();
            assert!(rel(run.objective[t], want) < 1e-8);
        }
    }
}
