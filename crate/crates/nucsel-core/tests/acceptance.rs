//! End-to-end acceptance checks. Runs without the libtest harness and
//! prints one line per criterion; the process fails if any criterion does.

mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;

use common::*;
use nucsel_core::cur::{cur_decompose, triangle_bound_check, CurMode};
use nucsel_core::gen::*;
use nucsel_core::laplacian::*;
use nucsel_core::linops::{condition_estimate, FactoredOperator, GramOp};
use nucsel_core::select::{diagonal_max, nuclear_max, Method};
use nucsel_core::sketch::{nuclear_max_matrix_free, MatrixFreeOptions};
use nucsel_core::verify::{self, CheckOutcome};

const SEED: u64 = 20_240_601;

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict { ok, detail: detail.into() }
}

fn suites(out: Vec<CheckOutcome>) -> Verdict {
    let ok = out.iter().all(|o| o.passed());
    let detail = out
        .iter()
        .map(|o| format!("{} {}/{} worst {:.2e}", o.name, o.checks - o.violations, o.checks, o.worst))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(ok, detail)
}

fn adversarial() -> Verdict {
    let (n, nc, alpha) = (2000, 45, 1.00001);
    let (k, _) = adversarial_kernel(n, nc, alpha).unwrap();
    let nuc = nuclear_max(&k, 100).unwrap();
    let dia = diagonal_max(&k, 1).unwrap();
    let ratio = nuc.gains[0] / dia.gains[0];
    let ratio_err = rel(ratio, nc as f64 / alpha);
    // Block structure: one eigenvalue n_c from the clique, n − n_c copies of α.
    let top = |k: usize| nc as f64 + (k - 1) as f64 * alpha;
    let mut above = 0;
    let mut worst_gap: f64 = 0.0;
    for (t, obj) in nuc.objective.iter().enumerate() {
        let bound = top(t + 1);
        if *obj > bound * (1.0 + 1e-12) {
            above += 1;
        }
        if t < nc {
            worst_gap = worst_gap.max((bound - obj) / bound);
        }
    }
    verdict(
        ratio_err < 1e-9 && above == 0 && worst_gap <= 0.01,
        format!("ratio rel err {ratio_err:.1e}, {above} steps above eigen bound, max gap k<=45 {worst_gap:.1e}"),
    )
}

fn star() -> Verdict {
    let (n, beta) = (100, 0.9999);
    let lap = star_laplacian(n, beta).unwrap();
    let k = pinv(&lap.to_dense(), 1e-12);
    let h = lap.h();
    let single = |j: usize| -k[(j, j)] / (h[j] * h[j]);
    let run = nuclear_max_laplacian_exact(&dense_pinv(&lap).unwrap(), h, 1).unwrap();
    let (nf, b2) = (n as f64, beta * beta);
    let base = b2 * b2 + nf * nf + 2.0 * b2 * (nf - 2.0) - 3.0 * nf;
    let leaf_err = rel(single(1) / single(0), (base + 2.0) / (nf - 1.0));
    let mean = (0..n).map(single).sum::<f64>() / nf;
    let mean_err = rel(mean / single(0), (base + 3.0) / nf);
    verdict(
        run.indices[0] == 0 && leaf_err < 1e-9 && mean_err < 1e-9,
        format!("first pick {}, ratio errors {leaf_err:.1e} / {mean_err:.1e}", run.indices[0]),
    )
}

fn chebyshev() -> Verdict {
    let got: Vec<usize> = [73.25, 49.36, 217.1].iter().map(|&kp| cheb_degree(kp, 1e-8, 1000)).collect();
    verdict(got == [99, 81, 176], format!("degrees {got:?}"))
}

/// Largest per-step relative deviation of `got` from `want`.
fn max_rel_dev(got: &[f64], want: &[f64]) -> f64 {
    got.iter().zip(want).map(|(g, w)| (g - w).abs() / w.abs()).fold(0.0, f64::max)
}

fn fidelity() -> Verdict {
    let seeds = 10u64;
    let z = 200;

    let c = sq_exp_factor(&spiral_points(10_000), 1000.0, 1e-10, 10_000, DEFAULT_DROP_TOL).unwrap();
    let tr = c.frobenius_sq();
    let det = nuclear_max(&GramOp::new(Arc::new(c.clone())), 100).unwrap();
    let ops = FactoredOperator::from_sparse_factor(c);
    let mut spiral_dev = Vec::new();
    for s in 0..seeds {
        let mf = nuclear_max_matrix_free(&ops, 100, MatrixFreeOptions::new(z, SEED + s).with_trace(tr)).unwrap();
        spiral_dev.push(max_rel_dev(&mf.objective, &det.objective));
    }

    // The Laplacian objective changes sign along the run, so the deviation
    // is taken relative to the complement trace Tr[L⁺] − objective.
    let lap = random_reversible_laplacian(700, 70, SEED).unwrap();
    let kd = dense_pinv(&lap).unwrap();
    let trk = kd.trace();
    let det = nuclear_max_laplacian_exact(&kd, lap.h(), 50).unwrap();
    let want: Vec<f64> = det.objective.iter().map(|o| trk - o).collect();
    let precon = default_precon(&lap, &PreconMode::Exact).unwrap();
    let ops = LaplacianOps::new(lap, precon, DEFAULT_PCG_TOL, 1e-8).unwrap();
    let mut lap_dev = Vec::new();
    for s in 0..seeds {
        let mf = nuclear_max_laplacian_matrix_free(&ops, 50, MatrixFreeOptions::new(z, SEED + s)).unwrap();
        let got: Vec<f64> = mf.objective.iter().map(|o| trk - o).collect();
        lap_dev.push(max_rel_dev(&got, &want));
    }

    let good = |d: &[f64]| d.iter().filter(|&&x| x <= 0.05).count();
    let worst = |d: &[f64]| d.iter().copied().fold(0.0, f64::max);
    let (gs, gl) = (good(&spiral_dev), good(&lap_dev));
    verdict(
        gs >= 9 && gl >= 9,
        format!(
            "spiral {gs}/10 seeds (worst {:.2}%), laplacian {gl}/10 seeds (worst {:.2}%)",
            100.0 * worst(&spiral_dev),
            100.0 * worst(&lap_dev)
        ),
    )
}

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
fn assembled_error(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    let all_r: Vec<usize> = (0..a.nrows()).collect();
    let all_c: Vec<usize> = (0..a.ncols()).collect();
    let qc = range_basis(&sub(a, &all_r, cols));
    let qr = range_basis(&sub(a, rows, &all_c).transpose());
    (a - &qc * (qc.transpose() * a * &qr) * qr.transpose()).norm()
}

fn cur() -> Verdict {
    let mut r = rng(SEED);
    let k = 10;
    let (mut mismatch, mut broken, mut uniform_worst) = (0, 0, 0);
    let mut worst_rel: f64 = 0.0;
    for i in 0..50u64 {
        let m = r.random_range(40..=200);
        let n = r.random_range(40..=200);
        let a = random_sparse(m, n, 0.05, SEED + i).unwrap();
        let d = a.to_dense();
        let mut errs = Vec::new();
        for method in Method::ALL {
            let res = cur_decompose(&a, k, k, method, CurMode::Deterministic, SEED + i).unwrap();
            let want = assembled_error(&d, &res.row_indices, &res.col_indices);
            let e = rel(res.frobenius_error, want);
            worst_rel = worst_rel.max(e);
            if e >= 1e-8 {
                mismatch += 1;
            }
            if !triangle_bound_check(&res, &a) {
                broken += 1;
            }
            errs.push((method, res.frobenius_error));
        }
        let uni = errs.iter().find(|(m, _)| *m == Method::Uniform).unwrap().1;
        if errs.iter().all(|(m, e)| *m == Method::Uniform || *e < uni) {
            uniform_worst += 1;
        }
    }
    verdict(
        mismatch == 0 && broken == 0 && uniform_worst >= 45,
        format!(
            "closed form worst rel {worst_rel:.1e} ({mismatch} mismatches), {broken} triangle failures, uniform worst on {uniform_worst}/50"
        ),
    )
}

/// The pluggable-factor path, exercised with an exact factor written to
/// disk in place of an external approximate Cholesky.
fn substitution() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let lap = random_reversible_laplacian(300, 60, SEED).unwrap();
    let exact = default_precon(&lap, &PreconMode::Exact).unwrap();
    let path = dir.path().join("factor.mtx");
    exact.save(&path).unwrap();
    let mode = PreconMode::External(path);
    let loaded = default_precon(&lap, &mode).unwrap();
    let b = loaded.b_operator(&lap).unwrap();
    let kappa = condition_estimate(&b, Some(b.null_vector())).unwrap();
    let same = loaded.r() == exact.r();
    verdict(
        same && kappa <= 1.0 + 1e-6,
        format!("external factor round trip, preconditioned kappa {kappa:.8}; large DNA chains, SuiteSparse timings and rchol kappa substituted"),
    )
}

fn main() -> ExitCode {
    type Check = (&'static str, u64, Box<dyn Fn() -> Verdict>);
    let checks: Vec<Check> = vec![
        ("adversarial kernel", 30, Box::new(adversarial)),
        ("star laplacian", 5, Box::new(star)),
        ("chebyshev degrees", 1, Box::new(chebyshev)),
        (
            "dpp discrepancy",
            60,
            Box::new(|| suites(vec![verify::dpp_discrepancy_suite(100, 50, 5, 25, SEED).unwrap()])),
        ),
        (
            "dpp properties",
            60,
            Box::new(|| suites(verify::dpp_property_suite(1000, 12, 1e-10, SEED).unwrap())),
        ),
        (
            "laplacian identities",
            120,
            Box::new(|| suites(verify::identity_suite(200, 40, 500, 1e-8, SEED).unwrap())),
        ),
        (
            "submodularity",
            120,
            Box::new(|| suites(vec![verify::submodularity_suite(200, 200, 8, 1e-9, SEED).unwrap()])),
        ),
        (
            "laplacian trace bound",
            120,
            Box::new(|| suites(vec![verify::laplacian_bound_suite(200, 10, 3, SEED).unwrap()])),
        ),
        ("matrix-free fidelity", 600, Box::new(fidelity)),
        ("cur decomposition", 300, Box::new(cur)),
        ("substituted experiments", 60, Box::new(substitution)),
    ];
    let mut failed = 0;
    for (name, limit, check) in &checks {
        let start = Instant::now();
        let v = check();
        let took = start.elapsed();
        let ok = v.ok && took < Duration::from_secs(*limit);
        if !ok {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s of {limit}s]",
            if ok { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
