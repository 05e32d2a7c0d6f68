mod common;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use common::*;
use nucsel_core::gen::{random_reversible_chain, random_reversible_laplacian, star_laplacian};
use nucsel_core::laplacian::*;
use nucsel_core::linops::{condition_estimate, DenseSym, SparseMat};
use nucsel_core::select::Method;
use nucsel_core::sketch::MatrixFreeOptions;

fn dense_k(lap: &RescaledLaplacian) -> DMatrix<f64> {
    pinv(&lap.to_dense(), 1e-12)
}

#[test]
fn two_state_rate_matrix() {
    let r = SparseMat::from_triplets(2, 2, &[(0, 0, -1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, -1.0)]).unwrap();
    let lap = RescaledLaplacian::from_rate_matrix(&r, &DVector::from_vec(vec![0.5, 0.5])).unwrap();
    let want = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
    assert!((lap.to_dense() - want).abs().max() < 1e-15);
    assert!((lap.h()[0] - 0.5f64.sqrt()).abs() < 1e-15);
}

#[test]
fn star_passes_invariants() {
    let lap = star_laplacian(100, 0.9999).unwrap();
    lap.validate().unwrap();
    let l = lap.to_dense();
    assert!((&l * lap.h()).norm() <= 1e-10 * l.norm());
    assert!((lap.h().norm() - 1.0).abs() < 1e-12);
}

#[test]
fn reversible_chain_has_single_null_vector() {
    for seed in 0..5 {
        let lap = random_reversible_laplacian(30, 15, seed).unwrap();
        let e = eigs_desc(&lap.to_dense());
        let top = e[0];
        assert!(e[29].abs() < 1e-10 * top);
        assert!(e[28] > 1e-8 * top);
        let (rates, pi) = random_reversible_chain(30, 15, seed).unwrap();
        for (i, j, v) in rates.iter() {
            assert!((pi[i] * v - pi[j] * rates.get(j, i)).abs() <= 1e-12 * (pi[i] * v).abs().max(1e-300));
        }
    }
}

#[test]
fn pinv_matvec_matches_dense() {
    let lap = random_reversible_laplacian(10, 6, 3).unwrap();
    let k = dense_k(&lap);
    let precon = default_precon(&lap, &PreconMode::Identity).unwrap();
    let mut r = rng(51);
    let x = DVector::from_fn(10, |_, _| r.random::<f64>() - 0.5);
    let y = pinv_matvec(&lap, &precon, &x, 1e-12).unwrap();
    let want = &k * &x;
    assert!((&y - &want).norm() <= 1e-8 * want.norm());

    let z = pinv_matvec(&lap, &precon, lap.h(), 1e-12).unwrap();
    assert!(z.norm() < 1e-14);

    let mut xp = x.clone();
    lap.project(&mut xp);
    let back = lap.to_dense() * pinv_matvec(&lap, &precon, &xp, 1e-12).unwrap();
    assert!((back - &xp).norm() <= 1e-9 * xp.norm());
}

#[test]
fn chebyshev_matches_dense_inverse_sqrt() {
    let mut r = rng(52);
    let mut g = gaussian(&mut r, 12, 12);
    g += DMatrix::identity(12, 12) * 4.0;
    let b = sym(&g * g.transpose());
    let e = b.matrix().clone().symmetric_eigen();
    let (lo, hi) = (e.eigenvalues.min(), e.eigenvalues.max());
    let isq = &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.powf(-0.5))) * e.eigenvectors.transpose();
    let inv = &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(|v| 1.0 / v)) * e.eigenvectors.transpose();
    let deg = cheb_degree(hi / lo, 1e-8, 12);
    let v = DVector::from_fn(12, |_, _| r.random::<f64>() - 0.5);
    let got = cheb_inv_sqrt_matvec(&b, lo, hi, &v, deg, None).unwrap();
    let want = &isq * &v;
    assert!((&got - &want).norm() <= 1e-7 * want.norm());
    let twice = cheb_inv_sqrt_matvec(&b, lo, hi, &got, deg, None).unwrap();
    let want2 = &inv * &v;
    assert!((twice - &want2).norm() <= 1e-7 * want2.norm());

    let c = DenseSym::from_diag(&[4.0; 5]);
    let u = DVector::from_element(5, 1.0 / 5f64.sqrt());
    let out = cheb_inv_sqrt_matvec(&c, 4.0, 4.0, &u, 10, None).unwrap();
    assert!((out - &u * 0.5).norm() < 1e-12);
}

#[test]
fn singleton_objective_and_trace_identity() {
    let lap = random_reversible_laplacian(12, 8, 4).unwrap();
    let k = dense_pinv(&lap).unwrap();
    let h = lap.h();
    for j in 0..12 {
        let v = laplacian_objective_eval(&k, h, &[j]).unwrap();
        assert!(rel(v, -k.get(j, j) / (h[j] * h[j])) < 1e-10);
    }
    let ev = eigs_desc(&lap.to_dense());
    let spectral: f64 = ev[..11].iter().map(|v| 1.0 / v).sum();
    assert!(rel(trace_pinv(&lap).unwrap(), spectral) < 1e-9);
}

#[test]
fn complement_identity_on_random_laplacians() {
    let mut r = rng(53);
    for seed in 0..40 {
        let n = r.random_range(3..=40);
        let lap = random_reversible_laplacian(n, r.random_range(0..n), seed).unwrap();
        let k = dense_k(&lap);
        let l = lap.to_dense();
        let size = r.random_range(1..n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            idx.swap(i, r.random_range(0..=i));
        }
        idx.truncate(size);
        let lhs = complement_inverse_trace(&l, &idx);
        let rhs = k.trace() - laplacian_objective(&k, lap.h(), &idx);
        assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(k.trace()), "n={n}");
        let lib = laplacian_objective_eval(&DenseSym::symmetrize(k.clone()).unwrap(), lap.h(), &idx).unwrap();
        assert!((lib - laplacian_objective(&k, lap.h(), &idx)).abs() <= 1e-8 * k.trace());
    }
}

#[test]
fn star_center_and_ratios() {
    let (n, beta) = (100usize, 0.9999f64);
    let lap = star_laplacian(n, beta).unwrap();
    let k = dense_k(&lap);
    let h = lap.h();
    let single = |j: usize| -k[(j, j)] / (h[j] * h[j]);
    let kd = DenseSym::symmetrize(k.clone()).unwrap();
    let run = nuclear_max_laplacian_exact(&kd, h, 3).unwrap();
    assert_eq!(run.indices[0], 0);
    let (nf, b2) = (n as f64, beta * beta);
    let poly = b2 * b2 + nf * nf + 2.0 * b2 * (nf - 2.0) - 3.0 * nf;
    assert!(rel(single(0) / single(1), (nf - 1.0) / (poly + 2.0)) < 1e-9);
    let mean = (0..n).map(single).sum::<f64>() / nf;
    assert!(rel(mean / single(0), (poly + 3.0) / nf) < 1e-9);
}

#[test]
fn exact_trajectory_matches_definition() {
    for seed in 0..5 {
        let lap = random_reversible_laplacian(6, 3, seed).unwrap();
        let k = dense_k(&lap);
        let kd = DenseSym::symmetrize(k.clone()).unwrap();
        let run = nuclear_max_laplacian_exact(&kd, lap.h(), 3).unwrap();
        let tr = k.trace();
        for t in 0..3 {
            let want = laplacian_objective(&k, lap.h(), &run.indices[..=t]);
            assert!((run.objective[t] - want).abs() <= 1e-8 * want.abs().max(tr));
            assert!(run.objective[t] <= tr * (1.0 + 1e-12));
        }
    }
}

#[test]
fn first_column_below_trace() {
    for seed in 0..20 {
        let lap = random_reversible_laplacian(15, seed as usize % 10, seed).unwrap();
        let k = dense_k(&lap);
        let h = lap.h();
        let best = (0..15).map(|j| k[(j, j)] / (h[j] * h[j])).fold(f64::INFINITY, f64::min);
        assert!(best <= k.trace() * (1.0 + 1e-12));
    }
}

#[test]
fn matrix_free_star_picks_center() {
    let lap = star_laplacian(100, 0.9999).unwrap();
    let precon = default_precon(&lap, &PreconMode::Exact).unwrap();
    let ops = LaplacianOps::new(lap, precon, DEFAULT_PCG_TOL, 1e-8).unwrap();
    let hits = (0..100)
        .filter(|&s| {
            nuclear_max_laplacian_matrix_free(&ops, 1, MatrixFreeOptions::new(200, s)).unwrap().indices[0] == 0
        })
        .count();
    assert!(hits >= 99, "{hits}");
}

#[test]
fn matrix_free_z_one_is_valid() {
    let lap = random_reversible_laplacian(30, 10, 8).unwrap();
    let tr = trace_pinv(&lap).unwrap();
    let precon = default_precon(&lap, &PreconMode::Exact).unwrap();
    let ops = LaplacianOps::new(lap.clone(), precon, DEFAULT_PCG_TOL, 1e-8).unwrap();
    let k = dense_pinv(&lap).unwrap();
    for m in Method::ALL {
        let run = select_laplacian_matrix_free(&ops, m, 5, MatrixFreeOptions::new(1, 3)).unwrap();
        for t in 0..run.len() {
            assert!(run.objective[t].is_finite() && run.objective[t] <= tr * (1.0 + 1e-9));
            let want = laplacian_objective_eval(&k, lap.h(), &run.indices[..=t]).unwrap();
            assert!((run.objective[t] - want).abs() <= 1e-6 * tr);
        }
    }
}

#[test]
fn exact_preconditioner_is_near_perfect() {
    for seed in 0..5 {
        let lap = random_reversible_laplacian(40, 20, seed).unwrap();
        let precon = default_precon(&lap, &PreconMode::Exact).unwrap();
        let b = precon.b_operator(&lap).unwrap();
        let kappa = condition_estimate(&b, Some(b.null_vector())).unwrap();
        assert!(kappa <= 1.0 + 1e-6, "{kappa}");
        assert!(precon.kappa() <= 1.0 + 1e-6);
    }
}

#[test]
fn identity_preconditioner_reports_laplacian_condition() {
    let lap = star_laplacian(100, 0.9999).unwrap();
    let precon = default_precon(&lap, &PreconMode::Identity).unwrap();
    let e = eigs_desc(&lap.to_dense());
    let want = e[0] / e[98];
    assert!(rel(precon.kappa(), want) < 0.01, "{} vs {want}", precon.kappa());
}

#[test]
fn external_factor_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let lap = random_reversible_laplacian(25, 10, 9).unwrap();
    let exact = default_precon(&lap, &PreconMode::Exact).unwrap();
    let p = dir.path().join("r.mtx");
    exact.save(&p).unwrap();
    let mode: PreconMode = format!("external:{}", p.display()).parse().unwrap();
    let loaded = default_precon(&lap, &mode).unwrap();
    assert_eq!(loaded.r().to_dense(), exact.r().to_dense());
    assert_eq!((loaded.a, loaded.b), (exact.a, exact.b));
    let x = DVector::from_fn(25, |i, _| (i as f64).sin());
    let y1 = pinv_matvec(&lap, &exact, &x, 1e-12).unwrap();
    let y2 = pinv_matvec(&lap, &loaded, &x, 1e-12).unwrap();
    assert_eq!(y1, y2);

    let small = random_reversible_laplacian(24, 10, 9).unwrap();
    assert!(default_precon(&small, &mode).is_err());
}

/// Expected time spent in `j` before hitting `absorb`, starting from `i`.
fn occupation_mc(rates: &DMatrix<f64>, i: usize, j: usize, absorb: usize, runs: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let n = rates.nrows();
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..runs {
        let mut x = i;
        let mut occ = 0.0;
        while x != absorb {
            let out = -rates[(x, x)];
            let hold: f64 = Exp1.sample(&mut r);
            if x == j {
                occ += hold / out;
            }
            let mut u = r.random::<f64>() * out;
            let mut next = x;
            for y in (0..n).filter(|&y| y != x) {
                if u < rates[(x, y)] {
                    next = y;
                    break;
                }
                u -= rates[(x, y)];
            }
            if next == x {
                next = (0..n).filter(|&y| y != x && rates[(x, y)] > 0.0).last().unwrap();
            }
            x = next;
        }
        s1 += occ;
        s2 += occ * occ;
    }
    let mean = s1 / runs as f64;
    let sd = ((s2 / runs as f64 - mean * mean) / runs as f64).sqrt();
    (mean, sd)
}

#[test]
fn occupation_times_match_markov_chain() {
    let (rates, pi) = random_reversible_chain(3, 1, 17).unwrap();
    let lap = RescaledLaplacian::from_rate_matrix(&rates, &pi).unwrap();
    let l = lap.to_dense();
    let h = lap.h();
    let absorb = 2;
    let rest = [0usize, 1];
    let linv = inv(&sub(&l, &rest, &rest));
    let rd = rates.to_dense();
    for (a, &i) in rest.iter().enumerate() {
        for (b, &j) in rest.iter().enumerate() {
            let want = h[j] / h[i] * linv[(a, b)];
            let (mean, sd) = occupation_mc(&rd, i, j, absorb, 100_000, 100 + 10 * i as u64 + j as u64);
            assert!((mean - want).abs() <= 3.0 * sd, "({i},{j}): {mean} vs {want} (sd {sd})");
        }
    }
}
