//! Matrix-free selection driven by randomized diagonal estimation.
//!
//! Only matvecs with K and with a factor C (K = C Cᵀ) are used. At each
//! step the numerator `Diag(K̃²)` and denominator `Diag(K̃)` of the nuclear
//! score are estimated from fresh Gaussian blocks pushed through the
//! Schur-complement projections of K and C.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linops::{FactoredOperator, LinearOperator};
use crate::rng;
use crate::select::{argmax_tie, sample_weighted, CholeskyState, Method, SelectionResult, PIVOT_GUARD};

/// Default sketch width.
pub const DEFAULT_Z: usize = 200;

/// Stream identifiers for seed derivation.
const STREAM_Z1: u64 = 1;
const STREAM_Z2: u64 = 2;
const STREAM_SAMPLE: u64 = 3;

/// Estimated numerator and denominator of the nuclear score, both already
/// divided by z.
#[derive(Clone, Debug)]
pub struct ScoreEstimate {
    pub numerator: DVector<f64>,
    pub denominator: DVector<f64>,
    pub z: usize,
    pub seeds: (u64, u64),
}

/// Unbiased estimate of Diag(Y Yᵀ): squared row norms of Y Z over z.
pub fn estimate_diag(y: &dyn LinearOperator, z: usize, seed: u64) -> Result<DVector<f64>> {
    if z == 0 {
        return Err(Error::Invalid("sketch width z must be at least 1".into()));
    }
    let mut r = rng::rng(seed);
    let zm = rng::gaussian_matrix(&mut r, y.in_dim(), z);
    Ok(row_sq_mean(&y.apply_block(&zm)))
}

fn row_sq_mean(x: &DMatrix<f64>) -> DVector<f64> {
    let z = x.ncols() as f64;
    let mut out = DVector::zeros(x.nrows());
    for c in 0..x.ncols() {
        for (o, v) in out.iter_mut().zip(x.column(c).iter()) {
            *o += v * v;
        }
    }
    out / z
}

/// X ↦ X + S U[:t,I]ᵀ X_I, i.e. left multiplication by
/// `I − K_{:,I} (K_{I,I})⁻¹ 𝕀_{I,:}`.
pub fn project(state: &CholeskyState, x: &mut DMatrix<f64>) {
    let t = state.t();
    if t == 0 {
        return;
    }
    let sel = state.selected();
    let xi = DMatrix::from_fn(t, x.ncols(), |r, c| x[(sel[r], c)]);
    let coef = state.u_selected().transpose() * xi;
    let s = state.s_cols();
    x.gemm(1.0, &s, &coef, 1.0);
}

/// Sketch block for the denominator: `C̃ Z⁽¹⁾`.
pub fn sketch_c(state: &CholeskyState, ops: &FactoredOperator, z: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::rng(seed);
    let z1 = rng::gaussian_matrix(&mut r, ops.c_op.in_dim(), z);
    let mut d = ops.c_op.apply_block(&z1);
    project(state, &mut d);
    d
}

/// Sketch block for the numerator: `K̃ Z⁽²⁾`.
pub fn sketch_k(state: &CholeskyState, ops: &FactoredOperator, z: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::rng(seed);
    let z2 = rng::gaussian_matrix(&mut r, ops.dim(), z);
    let mut nmat = ops.k_op.apply_block(&z2);
    project(state, &mut nmat);
    nmat
}

/// Estimated `(Diag(K̃²), Diag(K̃))` from independent blocks seeded by
/// `seeds.0` (for C) and `seeds.1` (for K).
pub fn randomized_scores(
    state: &CholeskyState,
    ops: &FactoredOperator,
    z: usize,
    seeds: (u64, u64),
) -> Result<ScoreEstimate> {
    if z == 0 {
        return Err(Error::Invalid("sketch width z must be at least 1".into()));
    }
    if state.n() != ops.dim() {
        return Err(Error::Dim(format!(
            "state has dimension {} but operator {}",
            state.n(),
            ops.dim()
        )));
    }
    let d = sketch_c(state, ops, z, seeds.0);
    let nmat = sketch_k(state, ops, z, seeds.1);
    Ok(ScoreEstimate {
        numerator: row_sq_mean(&nmat),
        denominator: row_sq_mean(&d),
        z,
        seeds,
    })
}

/// Options for the matrix-free selectors.
#[derive(Clone, Copy, Debug)]
pub struct MatrixFreeOptions {
    pub z: usize,
    pub seed: u64,
    /// Tr[K] if known, used for the residual trajectory.
    pub trace: Option<f64>,
    pub guard: f64,
}

impl MatrixFreeOptions {
    pub fn new(z: usize, seed: u64) -> Self {
        Self {
            z,
            seed,
            trace: None,
            guard: PIVOT_GUARD,
        }
    }

    pub fn with_trace(mut self, trace: f64) -> Self {
        self.trace = Some(trace);
        self
    }
}

pub fn iteration_seeds(seed: u64, step: usize) -> (u64, u64) {
    (
        rng::derive(seed, STREAM_Z1, step as u64),
        rng::derive(seed, STREAM_Z2, step as u64),
    )
}

enum MfRule {
    Nuclear,
    DiagMax,
    DiagSample,
}

fn unit(n: usize, j: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[j] = 1.0;
    e
}

fn run_mf(ops: &FactoredOperator, k: usize, opts: MatrixFreeOptions, rule: MfRule, method: Method) -> Result<SelectionResult> {
    let n = ops.dim();
    if k > n {
        return Err(Error::Invalid(format!("k = {k} exceeds n = {n}")));
    }
    if opts.z == 0 {
        return Err(Error::Invalid("sketch width z must be at least 1".into()));
    }
    let mut st = CholeskyState::new_matrix_free(n, k);
    let mut res = SelectionResult::new(method.name(), opts.trace.unwrap_or(f64::NAN));
    res.seed = Some(opts.seed);
    res.z = Some(opts.z);
    let mut excluded = vec![false; n];
    let mut sample_rng = rng::rng(rng::derive(opts.seed, STREAM_SAMPLE, 0));
    let mut skipped = 0usize;
    for step in 0..k {
        let seeds = iteration_seeds(opts.seed, step);
        let scores: DVector<f64> = match rule {
            MfRule::Nuclear => {
                let est = randomized_scores(&st, ops, opts.z, seeds)?;
                est.numerator.component_div(&est.denominator)
            }
            MfRule::DiagMax | MfRule::DiagSample => row_sq_mean(&sketch_c(&st, ops, opts.z, seeds.0)),
        };
        loop {
            let cand = (0..n).filter(|&j| !st.contains(j) && !excluded[j]);
            let pick = match rule {
                MfRule::Nuclear | MfRule::DiagMax => argmax_tie(cand.map(|j| (j, scores[j]))),
                MfRule::DiagSample => {
                    let w: Vec<(usize, f64)> = cand.map(|j| (j, scores[j])).collect();
                    sample_weighted(&mut sample_rng, &w)
                }
            };
            let Some(j) = pick else {
                res.early_stop = Some(format!("no admissible candidate after {step} steps"));
                return Ok(finish(res, skipped));
            };
            let kej = ops.k_op.apply(&unit(n, j));
            let kjj = kej[j];
            let v = residual_column(&st, j, &kej);
            let dj = v[j];
            if dj < opts.guard * kjj || !(dj > 0.0) {
                if dj < -opts.guard * kjj.abs() || !dj.is_finite() {
                    return Err(Error::Breakdown(format!(
                        "nonpositive pivot {dj:e} at step {step} (index {j}, K_jj = {kjj:e})"
                    )));
                }
                // Numerically spanned column: drop it and take the next best.
                excluded[j] = true;
                skipped += 1;
                continue;
            }
            let gain = v.norm_squared() / dj;
            st.pivot(j, &kej)?;
            res.push(j, gain);
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

/// `K̃ e_j` from `K e_j` and the current S.
pub fn residual_column(st: &CholeskyState, j: usize, kej: &DVector<f64>) -> DVector<f64> {
    let t = st.t();
    let mut v = kej.clone();
    if t > 0 {
        let s = st.s_cols();
        let srow: DVector<f64> = s.row(j).transpose();
        v.gemv(-1.0, &s, &srow, 1.0);
    }
    v
}

/// Matrix-free nuclear maximization. Recorded gains are exact: each pivot
/// already requires `K e_j`, from which `‖K̃e_j‖² / K̃_jj` follows.
pub fn nuclear_max_matrix_free(ops: &FactoredOperator, k: usize, opts: MatrixFreeOptions) -> Result<SelectionResult> {
    run_mf(ops, k, opts, MfRule::Nuclear, Method::Nuclear)
}

/// Matrix-free diagonal maximization on the estimated Diag(K̃).
pub fn diagonal_max_matrix_free(ops: &FactoredOperator, k: usize, opts: MatrixFreeOptions) -> Result<SelectionResult> {
    run_mf(ops, k, opts, MfRule::DiagMax, Method::DiagMax)
}

/// Matrix-free diagonal sampling on the estimated Diag(K̃).
pub fn diagonal_sample_matrix_free(ops: &FactoredOperator, k: usize, opts: MatrixFreeOptions) -> Result<SelectionResult> {
    run_mf(ops, k, opts, MfRule::DiagSample, Method::DiagSample)
}

/// Uniform sampling needs no sketch; gains come from exact pivots.
pub fn uniform_matrix_free(ops: &FactoredOperator, k: usize, opts: MatrixFreeOptions) -> Result<SelectionResult> {
    let n = ops.dim();
    let order = crate::select::uniform_indices(n, k, opts.seed)?;
    let mut st = CholeskyState::new_matrix_free(n, k);
    let mut res = SelectionResult::new(Method::Uniform.name(), opts.trace.unwrap_or(f64::NAN));
    res.seed = Some(opts.seed);
    for j in order {
        let kej = ops.k_op.apply(&unit(n, j));
        let v = residual_column(&st, j, &kej);
        let dj = v[j];
        if dj < opts.guard * kej[j] || !(dj > 0.0) {
            res.push(j, 0.0);
            res.early_stop.get_or_insert_with(|| format!("index {j} skipped by the pivot guard"));
            continue;
        }
        st.pivot(j, &kej)?;
        res.push(j, v.norm_squared() / dj);
    }
    Ok(res)
}

/// Dispatch on [`Method`].
pub fn select_matrix_free(ops: &FactoredOperator, method: Method, k: usize, opts: MatrixFreeOptions) -> Result<SelectionResult> {
    match method {
        Method::Nuclear => nuclear_max_matrix_free(ops, k, opts),
        Method::DiagMax => diagonal_max_matrix_free(ops, k, opts),
        Method::DiagSample => diagonal_sample_matrix_free(ops, k, opts),
        Method::Uniform => uniform_matrix_free(ops, k, opts),
    }
}
