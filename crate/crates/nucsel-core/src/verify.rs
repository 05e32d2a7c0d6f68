//! Randomized property suites for the selection identities and bounds.
//!
//! Each suite draws its own instances from a seed and compares library
//! results with dense formulas evaluated directly through nalgebra's
//! factorizations. Suites report counts rather than panicking so that
//! callers can tabulate them.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::bounds::{dpp_discrepancy_check, laplacian_bound_check, lp_bound_general};
use crate::error::Result;
use crate::gen::{random_reversible_laplacian, random_spsd, star_laplacian, Decay};
use crate::laplacian::{cheb_degree, complement_trace, dense_pinv, laplacian_objective_eval, nuclear_max_laplacian_exact};
use crate::linops::DenseSym;
use crate::rng;
use crate::select::{nuclear_max, objective_eval};
use crate::sympoly::{dpp_expectation_clamped, Spectrum};

/// Result of one suite.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub checks: usize,
    pub violations: usize,
    /// Most adverse normalized slack or error seen (suite specific).
    pub worst: f64,
    pub elapsed: Duration,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.checks > 0
    }
}

struct Tally {
    name: String,
    checks: usize,
    violations: usize,
    worst: f64,
    start: Instant,
}

impl Tally {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            checks: 0,
            violations: 0,
            worst: f64::NEG_INFINITY,
            start: Instant::now(),
        }
    }

    /// Record one check whose badness is `err` (violation iff `err > 0`).
    fn record(&mut self, err: f64) {
        self.checks += 1;
        if !(err <= 0.0) {
            self.violations += 1;
        }
        if err.is_nan() {
            self.worst = f64::NAN;
        } else if !self.worst.is_nan() {
            self.worst = self.worst.max(err);
        }
    }

    fn fail(&mut self) {
        self.checks += 1;
        self.violations += 1;
    }

    fn done(self) -> CheckOutcome {
        CheckOutcome {
            name: self.name,
            checks: self.checks,
            violations: self.violations,
            worst: self.worst,
            elapsed: self.start.elapsed(),
        }
    }
}

fn random_subset(r: &mut rng::Rng, n: usize, size: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    for i in 0..size {
        let j = r.random_range(i..n);
        all.swap(i, j);
    }
    let mut out = all[..size].to_vec();
    out.sort_unstable();
    out
}

fn sub(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn inverse(m: DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.cholesky().map(|c| c.inverse())
}

/// `Tr[(K²)_{I,I} K_{I,I}⁻¹]` from dense products.
fn kernel_objective_dense(k: &DMatrix<f64>, idx: &[usize]) -> Option<f64> {
    if idx.is_empty() {
        return Some(0.0);
    }
    let k2 = k * k;
    let inv = inverse(sub(k, idx, idx))?;
    Some((sub(&k2, idx, idx) * inv).trace())
}

/// `K − K_{:,I} K_{I,I}⁻¹ K_{I,:}`.
fn k_tilde(k: &DMatrix<f64>, idx: &[usize]) -> Option<DMatrix<f64>> {
    if idx.is_empty() {
        return Some(k.clone());
    }
    let all: Vec<usize> = (0..k.nrows()).collect();
    let a = sub(k, &all, idx);
    let inv = inverse(sub(k, idx, idx))?;
    Some(k - &a * inv * a.transpose())
}

/// Laplacian objective and `K̂(I)` from the dense definitions.
fn laplacian_dense(k: &DMatrix<f64>, h: &DVector<f64>, idx: &[usize]) -> Option<(f64, DMatrix<f64>)> {
    let all: Vec<usize> = (0..k.nrows()).collect();
    let a = sub(k, &all, idx);
    let inv = inverse(sub(k, idx, idx))?;
    let hi = DVector::from_fn(idx.len(), |i, _| h[idx[i]]);
    let q = &inv * &hi;
    let tau = hi.dot(&q);
    let k2 = k * k;
    let obj = (sub(&k2, idx, idx) * &inv).trace() - (1.0 + (sub(&k2, idx, idx) * &q).dot(&q)) / tau;
    let u = h - &a * &q;
    let khat = k - &a * &inv * a.transpose() + &u * u.transpose() / tau;
    Some((obj, khat))
}

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(a.abs()).max(b.abs()).max(f64::MIN_POSITIVE)
}

fn decay_for(i: usize) -> Decay {
    match i % 5 {
        0 => Decay::Flat,
        1 => Decay::Geometric(0.9),
        2 => Decay::Geometric(0.7),
        3 => Decay::Power(1.0),
        _ => Decay::Power(2.0),
    }
}

/// Greedy versus s-DPP on random SPSD matrices: the strict exponential
/// bound, the product bound and the per-step LP inequalities, for every
/// `1 ≤ s ≤ s_max ≤ k ≤ k_max`. `worst` is the largest `gap − e^{−k/s}`.
pub fn dpp_discrepancy_suite(count: usize, n: usize, s_max: usize, k_max: usize, seed: u64) -> Result<CheckOutcome> {
    let mut t = Tally::new("dpp_discrepancy");
    for i in 0..count {
        let k = random_spsd(n, n, decay_for(i), rng::derive(seed, 10, i as u64))?;
        let run = nuclear_max(&k, k_max)?;
        let spec = Spectrum::of(&k);
        for s in 1..=s_max {
            let rep = dpp_discrepancy_check(&run, &spec, s, 0.0)?;
            let lp_slack = 1e-10 * rep.r_ref.abs();
            for st in rep.steps.iter().filter(|st| st.k >= s_max) {
                let lp = st.lp_residual.unwrap_or(0.0);
                let ok = st.measured_gap < st.bound_exp && st.satisfied && lp >= -lp_slack;
                t.record(if ok { st.measured_gap - st.bound_exp } else { 1.0 });
            }
        }
    }
    Ok(t.done())
}

fn random_spectrum(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    let wide = r.random_bool(0.5);
    let mut x: Vec<f64> = (0..n)
        .map(|_| if wide { (r.random_range(-6.0..0.0f64)).exp() } else { r.random_range(0.0..1.0) })
        .collect();
    if r.random_bool(0.2) {
        let z = r.random_range(0..n);
        x[z] = 0.0;
    }
    x
}

fn dpp_all(x: &[f64]) -> Result<Vec<f64>> {
    let spec = Spectrum::new(x.to_vec());
    (0..=x.len()).map(|s| Ok(dpp_expectation_clamped(&spec, s)?.value)).collect()
}

/// Monotonicity, concavity, Schur-convexity and subadditivity of `D_s`.
/// Slack tolerance is `tol·max(1, Tr)`; `worst` is the most negative slack
/// (sign flipped, so positive means violated).
pub fn dpp_property_suite(count: usize, n_max: usize, tol: f64, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut r = rng::rng(rng::derive(seed, 11, 0));
    let mut mono = Tally::new("dpp_monotone");
    let mut conc = Tally::new("dpp_concave");
    let mut schur = Tally::new("dpp_schur_convex");
    let mut subadd = Tally::new("dpp_subadditive");
    for i in 0..count {
        let n = r.random_range(2..=n_max);
        let x = random_spectrum(&mut r, n);
        let tr: f64 = x.iter().sum();
        let eps = tol * tr.max(1.0);
        let d = dpp_all(&x)?;
        let worst_mono = (0..n).map(|s| d[s] - d[s + 1]).fold(f64::NEG_INFINITY, f64::max);
        mono.record(worst_mono - eps);
        let worst_conc = (1..n)
            .map(|s| (d[s + 1] - d[s]) - (d[s] - d[s - 1]))
            .fold(f64::NEG_INFINITY, f64::max);
        conc.record(if n > 1 { worst_conc - eps } else { -eps });

        // A T-transform moves the spectrum down in the majorization order.
        let (a, b) = (r.random_range(0..n), r.random_range(0..n - 1));
        let b = if b >= a { b + 1 } else { b };
        let w = r.random_range(0.0..1.0);
        let mut y = x.clone();
        y[a] = w * x[a] + (1.0 - w) * x[b];
        y[b] = (1.0 - w) * x[a] + w * x[b];
        let dy = dpp_all(&y)?;
        let worst_schur = (0..=n).map(|s| dy[s] - d[s]).fold(f64::NEG_INFINITY, f64::max);
        schur.record(worst_schur - eps);

        let ra = r.random_range(1..=n);
        let rb = r.random_range(1..=n);
        let ka = random_spsd(n, ra, decay_for(i), rng::derive(seed, 12, i as u64))?;
        let kb = random_spsd(n, rb, decay_for(i + 2), rng::derive(seed, 13, i as u64))?;
        let sum = DenseSym::symmetrize(ka.matrix() + kb.matrix())?;
        let (da, db, ds) = (dpp_all(&ka.eigenvalues())?, dpp_all(&kb.eigenvalues())?, dpp_all(&sum.eigenvalues())?);
        let eps2 = tol * sum.trace().max(1.0);
        let worst_sub = (0..=n).map(|s| ds[s] - da[s] - db[s]).fold(f64::NEG_INFINITY, f64::max);
        subadd.record(worst_sub - eps2);
    }
    Ok(vec![mono.done(), conc.done(), schur.done(), subadd.done()])
}

/// Complement identity, first-column and augmentation identities on random
/// rescaled Laplacians, and the kernel augmentation identity on random
/// `(K, I, j)`. Errors are relative to `max(|lhs|, |rhs|, Tr K)`.
pub fn identity_suite(n_laps: usize, n_max: usize, n_triples: usize, tol: f64, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut r = rng::rng(rng::derive(seed, 20, 0));
    let mut comp = Tally::new("laplacian_complement");
    let mut first = Tally::new("laplacian_first_column");
    let mut aug = Tally::new("laplacian_augmentation");
    let mut kern = Tally::new("kernel_augmentation");
    let mut laps = Vec::with_capacity(n_laps);
    for i in 0..n_laps {
        let n = r.random_range(3..=n_max);
        let extra = r.random_range(0..=n);
        let lap = random_reversible_laplacian(n, extra, rng::derive(seed, 21, i as u64))?;
        let l = lap.to_dense();
        let h = lap.h().clone();
        let hh = &h * h.transpose();
        let Some(kinv) = (l.clone() + &hh).try_inverse() else {
            comp.fail();
            continue;
        };
        let k = kinv - &hh;
        let trk = k.trace();
        let lib_k = dense_pinv(&lap)?;

        let size = r.random_range(1..n);
        let idx = random_subset(&mut r, n, size);
        let rest: Vec<usize> = (0..n).filter(|x| !idx.contains(x)).collect();
        let lhs = inverse(sub(&l, &rest, &rest)).map(|m| m.trace());
        let rhs = laplacian_dense(&k, &h, &idx).map(|(obj, _)| trk - obj);
        match (lhs, rhs) {
            (Some(a), Some(b)) => {
                comp.record(rel_err(a, b, trk) - tol);
                // The library paths must agree with the same identity.
                let lib_lhs = complement_trace(&l, &idx)?;
                let lib_obj = laplacian_objective_eval(&lib_k, &h, &idx)?;
                comp.record(rel_err(lib_lhs, a, trk) - tol);
                comp.record(rel_err(trk - lib_obj, a, trk) - tol);
            }
            _ => comp.fail(),
        }

        let j = r.random_range(0..n);
        match laplacian_dense(&k, &h, &[j]) {
            Some((obj, _)) => first.record(rel_err(obj, -k[(j, j)] / (h[j] * h[j]), trk) - tol),
            None => first.fail(),
        }
        laps.push((k, h, trk));
    }
    if !laps.is_empty() {
        for _ in 0..n_triples {
            let (k, h, trk) = &laps[r.random_range(0..laps.len())];
            let n = k.nrows();
            let size = r.random_range(1..n - 1);
            let idx = random_subset(&mut r, n, size + 1);
            let (j, base) = (idx[size], idx[..size].to_vec());
            let mut base_sorted = base.clone();
            base_sorted.sort_unstable();
            let mut with = base_sorted.clone();
            with.push(j);
            match (laplacian_dense(k, h, &base_sorted), laplacian_dense(k, h, &with)) {
                (Some((o1, khat)), Some((o2, _))) => {
                    let kh2 = (&khat * &khat)[(j, j)];
                    aug.record(rel_err(o2 - o1, kh2 / khat[(j, j)], *trk) - tol);
                }
                _ => aug.fail(),
            }
        }
    }
    for i in 0..n_triples {
        let n = r.random_range(3..=30);
        let k = random_spsd(n, n, decay_for(i), rng::derive(seed, 22, i as u64))?;
        let km = k.matrix();
        let size = r.random_range(0..n - 1);
        let mut idx = random_subset(&mut r, n, size + 1);
        let j = idx.swap_remove(r.random_range(0..=size));
        idx.sort_unstable();
        let mut with = idx.clone();
        with.push(j);
        match (kernel_objective_dense(km, &idx), kernel_objective_dense(km, &with), k_tilde(km, &idx)) {
            (Some(o1), Some(o2), Some(kt)) => {
                let tr = k.trace();
                let gain = (&kt * &kt)[(j, j)] / kt[(j, j)];
                kern.record(rel_err(o2, o1 + gain, tr) - tol);
                kern.record(rel_err(objective_eval(&k, &with)?, o2, tr) - tol);
            }
            _ => kern.fail(),
        }
    }
    Ok(vec![comp.done(), first.done(), aug.done(), kern.done()])
}

/// `Tr[(L_{Ā,Ā})⁻¹] − Tr[(L_{AB̄})⁻¹] − Tr[(L_{AC̄})⁻¹] + Tr[(L_{ABC̄})⁻¹] ≥ 0`
/// for nonempty A, with slack `tol·max(1, Tr[(L_{Ā,Ā})⁻¹])`.
pub fn submodularity_suite(n_laps: usize, n_triples: usize, n_max: usize, tol: f64, seed: u64) -> Result<CheckOutcome> {
    let mut r = rng::rng(rng::derive(seed, 30, 0));
    let mut t = Tally::new("laplacian_submodular");
    for i in 0..n_laps {
        let n = r.random_range(3..=n_max);
        let extra = r.random_range(0..=n);
        let lap = random_reversible_laplacian(n, extra, rng::derive(seed, 31, i as u64))?;
        let l = lap.to_dense();
        let ctr = |set: &[bool]| -> Option<f64> {
            let rest: Vec<usize> = (0..n).filter(|&x| !set[x]).collect();
            if rest.is_empty() {
                return Some(0.0);
            }
            inverse(sub(&l, &rest, &rest)).map(|m| m.trace())
        };
        for _ in 0..n_triples {
            let mut a = vec![false; n];
            a[r.random_range(0..n)] = true;
            let (mut ab, mut ac) = (a.clone(), a.clone());
            for x in 0..n {
                a[x] |= r.random_bool(0.2);
            }
            for x in 0..n {
                ab[x] = a[x] || r.random_bool(0.3);
                ac[x] = a[x] || r.random_bool(0.3);
            }
            let abc: Vec<bool> = (0..n).map(|x| ab[x] || ac[x]).collect();
            match (ctr(&a), ctr(&ab), ctr(&ac), ctr(&abc)) {
                (Some(ta), Some(tb), Some(tc), Some(td)) => {
                    let v = ta - tb - tc + td;
                    t.record(-v / ta.max(1.0) - tol);
                }
                _ => t.fail(),
            }
        }
    }
    Ok(t.done())
}

/// Greedy Laplacian runs against enumerated optima:
/// `L(O_s) − L(G_k) ≤ 2 Tr[L⁺] e^{−(k−1)/s}` for every prefix, plus the
/// first-step floor `L(G_1) ≥ −Tr[L⁺]`. `worst` is the largest
/// `(gap − bound)/Tr[L⁺]`.
pub fn laplacian_bound_suite(count: usize, n_max: usize, s_max: usize, seed: u64) -> Result<CheckOutcome> {
    let mut r = rng::rng(rng::derive(seed, 40, 0));
    let mut t = Tally::new("laplacian_trace_bound");
    for i in 0..count {
        let n = r.random_range(3..=n_max);
        let extra = r.random_range(0..=n);
        let lap = random_reversible_laplacian(n, extra, rng::derive(seed, 41, i as u64))?;
        let k = dense_pinv(&lap)?;
        let trk = k.trace();
        let run = nuclear_max_laplacian_exact(&k, lap.h(), n - 1)?;
        let slack = 1e-10 * trk;
        if let Some(&g1) = run.objective.first() {
            t.record((-trk - g1 - slack) / trk);
        }
        for s in 1..=s_max.min(n - 1) {
            let rep = laplacian_bound_check(&run, &lap, s, 0.0, None)?;
            for st in &rep.steps {
                let loose = st.measured_gap - 2.0 * trk * (-((st.k - 1) as f64) / s as f64).exp();
                let ok = st.satisfied && loose <= slack;
                t.record(if ok { loose / trk } else { loose.max(0.0) / trk + 1.0 });
            }
        }
    }
    Ok(t.done())
}

/// `min Σ y` subject to `Σ_{i<t} y_i + f_t y_t ≥ 1`, `y ≥ 0`, by
/// enumerating every vertex (k tight constraints out of 2k).
pub fn lp_min_by_vertices(f: &[f64]) -> f64 {
    let k = f.len();
    if k == 0 {
        return 0.0;
    }
    let mut rows = Vec::with_capacity(2 * k);
    for t in 0..k {
        let mut a = vec![0.0; k];
        a[..t].iter_mut().for_each(|x| *x = 1.0);
        a[t] = f[t];
        rows.push((a, 1.0));
    }
    for t in 0..k {
        let mut a = vec![0.0; k];
        a[t] = 1.0;
        rows.push((a, 0.0));
    }
    let mut best = f64::INFINITY;
    crate::sympoly::for_each_subset(2 * k, k, |pick| {
        let a = DMatrix::from_fn(k, k, |i, j| rows[pick[i]].0[j]);
        let b = DVector::from_fn(k, |i, _| rows[pick[i]].1);
        let Some(y) = a.lu().solve(&b) else { return };
        let feasible = y.iter().all(|&v| v >= -1e-12)
            && rows.iter().all(|(a, rhs)| a.iter().zip(y.iter()).map(|(p, q)| p * q).sum::<f64>() >= rhs - 1e-12);
        if feasible {
            best = best.min(y.sum());
        }
    });
    best
}

/// The LP optimum matches `1 − ∏(1 − 1/f_i)` for random `f ∈ (1, 10]`.
pub fn lp_duality_suite(count: usize, k_max: usize, tol: f64, seed: u64) -> Result<CheckOutcome> {
    let mut r = rng::rng(rng::derive(seed, 50, 0));
    let mut t = Tally::new("lp_vertex_duality");
    for _ in 0..count {
        let k = r.random_range(1..=k_max);
        let f: Vec<f64> = (0..k).map(|_| 1.0 + r.random_range(f64::EPSILON..9.0)).collect();
        let want = 1.0 - lp_bound_general(&f)?.product;
        t.record((lp_min_by_vertices(&f) - want).abs() - tol);
    }
    Ok(t.done())
}

/// Chebyshev degrees at ε = 1e−8 for three tabulated condition numbers.
pub fn cheb_table_check() -> CheckOutcome {
    let mut t = Tally::new("cheb_degree_table");
    for (kappa, want) in [(73.25, 99usize), (49.36, 81), (217.1, 176)] {
        let got = cheb_degree(kappa, 1e-8, 1000);
        t.record(if got == want { -1.0 } else { (got as f64 - want as f64).abs() });
    }
    t.done()
}

/// Star Laplacian: the greedy first pick is the center and the single-column
/// objective ratios match their closed forms. `worst` is the larger
/// relative error.
pub fn star_check(n: usize, beta: f64, tol: f64) -> Result<CheckOutcome> {
    let mut t = Tally::new("star_laplacian");
    let lap = star_laplacian(n, beta)?;
    let k = dense_pinv(&lap)?;
    let h = lap.h();
    let run = nuclear_max_laplacian_exact(&k, h, 1)?;
    t.record(if run.indices.first() == Some(&0) { -1.0 } else { 1.0 });
    let single = |j: usize| -k.get(j, j) / (h[j] * h[j]);
    let center = single(0);
    let nf = n as f64;
    let b2 = beta * beta;
    let want_max = (b2 * b2 + nf * nf + 2.0 * b2 * (nf - 2.0) - 3.0 * nf + 2.0) / (nf - 1.0);
    let want_mean = (b2 * b2 + nf * nf + 2.0 * b2 * (nf - 2.0) - 3.0 * nf + 3.0) / nf;
    // Diagonal maximization picks the largest h_j², i.e. a leaf.
    let leaf = (1..n).max_by(|&a, &b| h[a].total_cmp(&h[b])).unwrap_or(1);
    let mean = (0..n).map(single).sum::<f64>() / nf;
    t.record(rel_err(single(leaf) / center, want_max, 0.0) - tol);
    t.record(rel_err(mean / center, want_mean, 0.0) - tol);
    Ok(t.done())
}

/// Counts used by [`run_all`].
#[derive(Clone, Copy, Debug)]
pub struct SuiteSizes {
    pub dpp_matrices: usize,
    pub dpp_spectra: usize,
    pub laplacians: usize,
    pub triples: usize,
    pub submodular_laplacians: usize,
    pub submodular_triples: usize,
    pub bound_laplacians: usize,
    pub lp_vectors: usize,
}

impl SuiteSizes {
    pub const FULL: SuiteSizes = SuiteSizes {
        dpp_matrices: 100,
        dpp_spectra: 1000,
        laplacians: 200,
        triples: 500,
        submodular_laplacians: 200,
        submodular_triples: 200,
        bound_laplacians: 200,
        lp_vectors: 200,
    };

    pub const QUICK: SuiteSizes = SuiteSizes {
        dpp_matrices: 10,
        dpp_spectra: 100,
        laplacians: 20,
        triples: 50,
        submodular_laplacians: 20,
        submodular_triples: 20,
        bound_laplacians: 20,
        lp_vectors: 30,
    };
}

/// Every suite in sequence.
pub fn run_all(sizes: SuiteSizes, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = vec![cheb_table_check(), star_check(100, 0.9999, 1e-9)?];
    out.push(dpp_discrepancy_suite(sizes.dpp_matrices, 50, 5, 25, seed)?);
    out.extend(dpp_property_suite(sizes.dpp_spectra, 12, 1e-10, seed)?);
    out.extend(identity_suite(sizes.laplacians, 40, sizes.triples, 1e-8, seed)?);
    out.push(submodularity_suite(sizes.submodular_laplacians, sizes.submodular_triples, 8, 1e-9, seed)?);
    out.push(laplacian_bound_suite(sizes.bound_laplacians, 10, 3, seed)?);
    out.push(lp_duality_suite(sizes.lp_vectors, 6, 1e-9, seed)?);
    Ok(out)
}
