//! Greedy selection for `K = L⁺`.
//!
//! On top of the Cholesky state over K, the Laplacian objective needs
//! `τ = h_Iᵀ K_{I,I}⁻¹ h_I` (accumulated in `g`) and
//! `y = h − K_{:,I} K_{I,I}⁻¹ h_I`. With `K̂ = K̃ + y yᵀ/τ` the gain of
//! adding j to a nonempty I is `(K̂²)_jj / K̂_jj`; the first column scores
//! `−K_jj / h_j²`.

use nalgebra::{DMatrix, DVector};

use super::{cheb_degree, cheb_inv_sqrt_block, pinv_block, pinv_matvec, BOperator, PreconFactor, RescaledLaplacian};
use crate::error::{Error, Result};
use crate::linops::{DenseSym, SymOperator};
use crate::rng;
use crate::select::{argmax_tie, sample_weighted, uniform_indices, CholeskyState, Method, SelectionResult, PIVOT_GUARD};
use crate::sketch::{iteration_seeds, project, residual_column, MatrixFreeOptions};
use crate::sympoly::{binomial, for_each_subset};


const STREAM_SAMPLE: u64 = 3;

/// Cholesky state over K plus the stationary-vector bookkeeping.
#[derive(Clone, Debug)]
pub struct LaplacianState {
    pub chol: CholeskyState,
    h: DVector<f64>,
    /// Σ τ_t², equal to `h_Iᵀ K_{I,I}⁻¹ h_I`.
    pub g: f64,
    pub y: DVector<f64>,
    /// `K̃ y` (exact path only).
    pub c: DVector<f64>,
}

impl LaplacianState {
    pub fn new_exact(k: &DenseSym, h: &DVector<f64>, k_max: usize) -> Self {
        Self {
            chol: CholeskyState::new_exact(k, k_max),
            h: h.clone(),
            g: 0.0,
            y: h.clone(),
            c: DVector::zeros(h.len()),
        }
    }

    pub fn new_matrix_free(h: &DVector<f64>, k_max: usize) -> Self {
        Self {
            chol: CholeskyState::new_matrix_free(h.len(), k_max),
            h: h.clone(),
            g: 0.0,
            y: h.clone(),
            c: DVector::zeros(h.len()),
        }
    }

    pub fn t(&self) -> usize {
        self.chol.t()
    }

    pub fn tau(&self) -> f64 {
        self.g
    }

    /// Exact scores from d, w, y, c.
    pub fn exact_scores(&self) -> DVector<f64> {
        let (d, w, y, h) = (&self.chol.d, &self.chol.w, &self.y, &self.h);
        if self.t() == 0 {
            return DVector::from_fn(d.len(), |j, _| -d[j] / (h[j] * h[j]));
        }
        let g = self.g;
        let yy = y.norm_squared();
        DVector::from_fn(d.len(), |j, _| {
            let num = w[j] + 2.0 * y[j] * self.c[j] / g + yy * y[j] * y[j] / (g * g);
            num / (d[j] + y[j] * y[j] / g)
        })
    }

    /// `Diag(K̂)` (or `h⊙h` before the first pivot).
    pub fn exact_diag(&self) -> DVector<f64> {
        if self.t() == 0 {
            return self.h.component_mul(&self.h);
        }
        DVector::from_fn(self.y.len(), |j, _| self.chol.d[j] + self.y[j] * self.y[j] / self.g)
    }

    /// Gain of adding j, from `v = K̃ e_j`.
    pub fn gain_from_column(&self, j: usize, v: &DVector<f64>) -> f64 {
        if self.t() == 0 {
            return -v[j] / (self.h[j] * self.h[j]);
        }
        let yj = self.y[j];
        let khat = v + &self.y * (yj / self.g);
        khat.norm_squared() / (v[j] + yj * yj / self.g)
    }

    fn absorb(&mut self, j: usize) -> (f64, DVector<f64>) {
        let t = self.t();
        let sel = self.chol.selected();
        let u = self.chol.u();
        let tau: f64 = (0..t).map(|r| u[(r, j)] * self.h[sel[r]]).sum();
        self.g += tau * tau;
        let s = self.chol.s_col(t - 1);
        self.y.axpy(tau, &s, 1.0);
        (tau, s)
    }

    pub fn pivot_exact(&mut self, k: &DenseSym, j: usize) -> Result<()> {
        let kej = k.column(j);
        self.chol.pivot(j, &kej)?;
        let (tau, s) = self.absorb(j);
        let ks = k.matrix() * &s;
        let f = self.chol.update_diagonals(&ks);
        let sy = s.dot(&self.y);
        self.c.axpy(tau, &f, 1.0);
        self.c.axpy(-sy, &s, 1.0);
        Ok(())
    }

    pub fn pivot_matrix_free(&mut self, j: usize, kej: &DVector<f64>) -> Result<()> {
        self.chol.pivot(j, kej)?;
        self.absorb(j);
        Ok(())
    }
}

enum Rule {
    Nuclear,
    DiagMax,
    DiagSample(rng::Rng),
    Fixed(Vec<usize>),
}

fn check_exact_inputs(k: &DenseSym, h: &DVector<f64>, kk: usize) -> Result<()> {
    let n = k.n();
    if h.len() != n {
        return Err(Error::Dim(format!("h has length {} but K is {n}x{n}", h.len())));
    }
    if kk > n {
        return Err(Error::Invalid(format!("k = {kk} exceeds n = {n}")));
    }
    let kh = (k.matrix() * h).norm();
    if kh > 1e-10 * k.matrix().norm().max(1.0) {
        return Err(Error::Invalid(format!("K h = {kh:e} is not zero; K must be L⁺")));
    }
    Ok(())
}

fn run_exact(k: &DenseSym, h: &DVector<f64>, kk: usize, mut rule: Rule, method: Method, seed: Option<u64>) -> Result<SelectionResult> {
    check_exact_inputs(k, h, kk)?;
    let n = k.n();
    let mut st = LaplacianState::new_exact(k, h, kk);
    let mut res = SelectionResult::new(method.name(), k.trace());
    res.seed = seed;
    let mut cursor = 0;
    while res.len() < kk {
        let scores = st.exact_scores();
        let eligible = |j: usize| st.chol.eligible(j, PIVOT_GUARD);
        let pick = match &mut rule {
            Rule::Nuclear => argmax_tie((0..n).filter(|&j| eligible(j)).map(|j| (j, scores[j]))),
            Rule::DiagMax | Rule::DiagSample(_) => {
                let dg = st.exact_diag();
                let cand = (0..n).filter(|&j| eligible(j)).map(|j| (j, dg[j]));
                match &mut rule {
                    Rule::DiagSample(r) => sample_weighted(r, &cand.collect::<Vec<_>>()),
                    _ => argmax_tie(cand),
                }
            }
            Rule::Fixed(order) => {
                let Some(&j) = order.get(cursor) else { break };
                cursor += 1;
                if !eligible(j) {
                    res.push(j, 0.0);
                    res.early_stop.get_or_insert_with(|| format!("index {j} skipped by the pivot guard"));
                    continue;
                }
                Some(j)
            }
        };
        let Some(j) = pick else {
            res.early_stop = Some(format!("no admissible candidate after {} steps", res.len()));
            break;
        };
        if st.t() == 0 {
            res.push_objective(j, scores[j]);
        } else {
            res.push(j, scores[j]);
        }
        st.pivot_exact(k, j)?;
    }
    Ok(res)
}

/// Deterministic nuclear maximization of the inverse-Laplacian objective on
/// a precomputed `K = L⁺`.
pub fn nuclear_max_laplacian_exact(k: &DenseSym, h: &DVector<f64>, kk: usize) -> Result<SelectionResult> {
    run_exact(k, h, kk, Rule::Nuclear, Method::Nuclear, None)
}

/// Exact-path dispatch on [`Method`]. The diagonal rules use `Diag(K̂)`,
/// which is `h⊙h` for the first column.
pub fn select_laplacian_exact(k: &DenseSym, h: &DVector<f64>, method: Method, kk: usize, seed: u64) -> Result<SelectionResult> {
    match method {
        Method::Nuclear => run_exact(k, h, kk, Rule::Nuclear, method, None),
        Method::DiagMax => run_exact(k, h, kk, Rule::DiagMax, method, None),
        Method::DiagSample => {
            let r = rng::rng(rng::derive(seed, STREAM_SAMPLE, 0));
            run_exact(k, h, kk, Rule::DiagSample(r), method, Some(seed))
        }
        Method::Uniform => {
            let order = uniform_indices(k.n(), kk, seed)?;
            run_exact(k, h, kk, Rule::Fixed(order), method, Some(seed))
        }
    }
}

/// Matvec access to `K = L⁺` (PCG) and to a factor `C` with `C Cᵀ = K`:
/// `C = P R⁻ᵀ B^{+/2}`, `B = R⁻¹ L R⁻ᵀ`, P the projector orthogonal to h.
#[derive(Clone, Debug)]
pub struct LaplacianOps {
    pub lap: RescaledLaplacian,
    pub precon: PreconFactor,
    b_op: BOperator,
    pub pcg_tol: f64,
    pub cheb_degree: usize,
}

impl LaplacianOps {
    pub fn new(lap: RescaledLaplacian, precon: PreconFactor, pcg_tol: f64, cheb_eps: f64) -> Result<Self> {
        if !(cheb_eps > 0.0 && cheb_eps < 1.0) {
            return Err(Error::Invalid(format!("Chebyshev tolerance {cheb_eps} outside (0, 1)")));
        }
        let b_op = precon.b_operator(&lap)?;
        let deg = cheb_degree(precon.kappa(), cheb_eps, lap.n());
        Ok(Self {
            lap,
            precon,
            b_op,
            pcg_tol,
            cheb_degree: deg,
        })
    }

    pub fn n(&self) -> usize {
        self.lap.n()
    }

    pub fn k_apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        pinv_matvec(&self.lap, &self.precon, x, self.pcg_tol)
    }

    pub fn k_block(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        pinv_block(&self.lap, &self.precon, x, self.pcg_tol)
    }

    pub fn c_block(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (lo, hi) = self.precon.interval();
        let mut x = cheb_inv_sqrt_block(&self.b_op, lo, hi, z, self.cheb_degree, Some(self.b_op.null_vector()))?;
        self.precon.solve_t_block(&mut x);
        let h = self.lap.h();
        for mut col in x.column_iter_mut() {
            let c = h.dot(&col);
            col.axpy(-c, h, 1.0);
        }
        Ok(x)
    }
}

fn row_sq_mean(x: &DMatrix<f64>) -> DVector<f64> {
    let z = x.ncols() as f64;
    DVector::from_fn(x.nrows(), |i, _| x.row(i).norm_squared() / z)
}

fn unit(n: usize, j: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[j] = 1.0;
    e
}

/// Estimated scores for the current state.
fn mf_scores(st: &LaplacianState, ops: &LaplacianOps, z: usize, seeds: (u64, u64), nuclear: bool) -> Result<DVector<f64>> {
    let n = ops.n();
    let h = ops.lap.h();
    let t = st.t();
    if !nuclear && t == 0 {
        return Ok(h.component_mul(h));
    }
    let z1 = rng::gaussian_matrix(&mut rng::rng(seeds.0), n, z);
    let mut d = ops.c_block(&z1)?;
    if t == 0 {
        let den = row_sq_mean(&d);
        return Ok(DVector::from_fn(n, |j, _| -den[j] / (h[j] * h[j])));
    }
    project(&st.chol, &mut d);
    let g = st.g;
    let y = &st.y;
    let den = row_sq_mean(&d) + y.component_mul(y) / g;
    if !nuclear {
        return Ok(den);
    }
    let z2 = rng::gaussian_matrix(&mut rng::rng(seeds.1), n, z);
    let mut nm = ops.k_block(&z2)?;
    let s = st.chol.s_cols();
    let stz = s.transpose() * &z2;
    nm.gemm(-1.0, &s, &stz, 1.0);
    let yh = (y - h).transpose() * &z2;
    nm.ger(1.0 / g, y, &yh.transpose(), 1.0);
    let num = row_sq_mean(&nm) + y.component_mul(y) / (g * g);
    Ok(num.component_div(&den))
}

fn run_mf(ops: &LaplacianOps, kk: usize, opts: MatrixFreeOptions, method: Method) -> Result<SelectionResult> {
    let n = ops.n();
    if kk > n {
        return Err(Error::Invalid(format!("k = {kk} exceeds n = {n}")));
    }
    if opts.z == 0 {
        return Err(Error::Invalid("sketch width z must be at least 1".into()));
    }
    let h = ops.lap.h();
    let mut st = LaplacianState::new_matrix_free(h, kk);
    let mut res = SelectionResult::new(method.name(), opts.trace.unwrap_or(f64::NAN));
    res.seed = Some(opts.seed);
    res.z = Some(opts.z);
    let mut sample_rng = rng::rng(rng::derive(opts.seed, STREAM_SAMPLE, 0));
    let mut order = match method {
        Method::Uniform => Some(uniform_indices(n, kk, opts.seed)?.into_iter()),
        _ => None,
    };
    let mut excluded = vec![false; n];
    let mut skipped = 0usize;
    let mut step = 0;
    while res.len() < kk {
        let scores = match method {
            Method::Uniform => DVector::zeros(0),
            _ => mf_scores(&st, ops, opts.z, iteration_seeds(opts.seed, step), method == Method::Nuclear)?,
        };
        step += 1;
        loop {
            let pick = match method {
                Method::Uniform => match order.as_mut().and_then(|o| o.next()) {
                    Some(j) => Some(j),
                    None => return Ok(finish(res, skipped)),
                },
                _ => {
                    let cand = (0..n).filter(|&j| !st.chol.contains(j) && !excluded[j]);
                    match method {
                        Method::DiagSample => {
                            let w: Vec<(usize, f64)> = cand.map(|j| (j, scores[j])).collect();
                            sample_weighted(&mut sample_rng, &w)
                        }
                        _ => argmax_tie(cand.map(|j| (j, scores[j]))),
                    }
                }
            };
            let Some(j) = pick else {
                res.early_stop = Some(format!("no admissible candidate after {} steps", res.len()));
                return Ok(finish(res, skipped));
            };
            let kej = ops.k_apply(&unit(n, j))?;
            let kjj = kej[j];
            let v = residual_column(&st.chol, j, &kej);
            let dj = v[j];
            if dj < opts.guard * kjj || !(dj > 0.0) {
                if dj < -opts.guard * kjj.abs() || !dj.is_finite() {
                    return Err(Error::Breakdown(format!(
                        "nonpositive pivot {dj:e} at step {} (index {j}, K_jj = {kjj:e})",
                        res.len()
                    )));
                }
                if method == Method::Uniform {
                    res.push(j, 0.0);
                    skipped += 1;
                    break;
                }
                excluded[j] = true;
                skipped += 1;
                continue;
            }
            let gain = st.gain_from_column(j, &v);
            if st.t() == 0 {
                res.push_objective(j, gain);
            } else {
                res.push(j, gain);
            }
            st.pivot_matrix_free(j, &kej)?;
            break;
        }
    }
    Ok(finish(res, skipped))
}

fn finish(mut res: SelectionResult, skipped: usize) -> SelectionResult {
    if skipped > 0 && res.early_stop.is_none() {
        res.early_stop = Some(format!("{skipped} candidate(s) rejected by the pivot guard"));
    }
    res
}

/// Matrix-free nuclear maximization for `K = L⁺`. Recorded gains are exact
/// up to PCG accuracy, computed from the `K e_j` each pivot requires.
pub fn nuclear_max_laplacian_matrix_free(ops: &LaplacianOps, kk: usize, opts: MatrixFreeOptions) -> Result<SelectionResult> {
    run_mf(ops, kk, opts, Method::Nuclear)
}

pub fn select_laplacian_matrix_free(ops: &LaplacianOps, method: Method, kk: usize, opts: MatrixFreeOptions) -> Result<SelectionResult> {
    run_mf(ops, kk, opts, method)
}

/// Best size-s subset for the Laplacian objective by enumeration.
pub fn laplacian_optimal_bruteforce(k: &DenseSym, h: &DVector<f64>, s: usize) -> Result<(Vec<usize>, f64)> {
    let n = k.n();
    if s == 0 || s > n {
        return Err(Error::Invalid(format!("subset size {s} outside 1..={n}")));
    }
    if binomial(n, s) > crate::select::BRUTEFORCE_MAX_SUBSETS {
        return Err(Error::Guard(format!("C({n},{s}) subsets is too many to enumerate")));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_subset(n, s, |idx| {
        if let Ok(v) = super::laplacian_objective_eval(k, h, idx) {
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((idx.to_vec(), v));
            }
        }
    });
    best.ok_or_else(|| Error::Degenerate("every subset has a singular K_{I,I}".into()))
}
