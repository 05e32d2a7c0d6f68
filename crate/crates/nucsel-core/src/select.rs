//! Deterministic column selection on SPSD matrices with element access.
//!
//! All four methods share one pivoted-Cholesky state. Nuclear maximization
//! picks the column with the largest `(K̃²)_jj / K̃_jj`, where `K̃` is the
//! Schur complement of the columns chosen so far; that ratio is exactly the
//! increase of `Tr[K_{:,I} (K_{I,I})⁻¹ K_{I,:}]` from adding column j.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linops::{cholesky, SymOperator};
use crate::rng;

/// Columns whose residual diagonal falls below this fraction of the
/// original diagonal are never selected.
pub const PIVOT_GUARD: f64 = 1e-8;

/// Relative width inside which two scores count as tied.
pub const TIE_REL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Nuclear,
    DiagMax,
    DiagSample,
    Uniform,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Nuclear,
        Method::DiagMax,
        Method::DiagSample,
        Method::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nuclear => "nuclear",
            Method::DiagMax => "diag-max",
            Method::DiagSample => "diag-sample",
            Method::Uniform => "uniform",
        }
    }

    pub fn is_random(self) -> bool {
        matches!(self, Method::DiagSample | Method::Uniform)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown method {s}")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered selection with per-step gains.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub gains: Vec<f64>,
    /// Cumulative objective after each step.
    pub objective: Vec<f64>,
    /// `Tr[K] − objective` after each step.
    pub residual_trace: Vec<f64>,
    pub trace: f64,
    pub method: String,
    pub seed: Option<u64>,
    pub z: Option<usize>,
    /// Set when selection stopped before k columns were chosen.
    pub early_stop: Option<String>,
    /// Objective re-evaluated from scratch at each step (debug mode only).
    pub recomputed: Option<Vec<f64>>,
}

impl SelectionResult {
    pub fn new(method: impl Into<String>, trace: f64) -> Self {
        Self {
            indices: Vec::new(),
            gains: Vec::new(),
            objective: Vec::new(),
            residual_trace: Vec::new(),
            trace,
            method: method.into(),
            seed: None,
            z: None,
            early_stop: None,
            recomputed: None,
        }
    }

    pub fn push(&mut self, index: usize, gain: f64) {
        let prev = self.objective.last().copied().unwrap_or(0.0);
        self.indices.push(index);
        self.gains.push(gain);
        self.objective.push(prev + gain);
        self.residual_trace.push(self.trace - (prev + gain));
    }

    /// Like [`push`](Self::push) but with the first objective value given
    /// directly (it can be negative for the Laplacian objective).
    pub fn push_objective(&mut self, index: usize, objective: f64) {
        let prev = self.objective.last().copied();
        self.indices.push(index);
        self.gains.push(match prev {
            Some(p) => objective - p,
            None => objective,
        });
        self.objective.push(objective);
        self.residual_trace.push(self.trace - objective);
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Incremental state `(U, S, d, w)` of pivoted-Cholesky-style selection.
///
/// After t selections `I = selected[..t]`:
/// * `U[:t, I]` is upper triangular with `U[:t,I] U[:t,I]ᵀ = (K_{I,I})⁻¹`;
///   for unselected m, `U[:t, m] = −(K_{I,I})⁻¹ K_{I,m}` (elimination
///   coefficients), so that `K̃ e_m = K (e_m + 𝕀_{:,I} U[:t,m])`.
/// * `S[:, :t] = −K_{:,I} U[:t, I]`, hence `S Sᵀ = K_{:,I} (K_{I,I})⁻¹ K_{I,:}`.
/// * `d = Diag(K̃)` and `w = Diag(K̃²)` (maintained only by the exact path).
#[derive(Clone, Debug)]
pub struct CholeskyState {
    n: usize,
    k_max: usize,
    u: DMatrix<f64>,
    s: DMatrix<f64>,
    pub d: DVector<f64>,
    pub w: DVector<f64>,
    kdiag: DVector<f64>,
    selected: Vec<usize>,
    in_set: Vec<bool>,
}

/// Output of one pivot step.
#[derive(Clone, Debug)]
pub struct Pivot {
    pub index: usize,
    /// Residual diagonal `K̃_jj` at the time of selection.
    pub dj: f64,
    /// `K̃ e_j` at the time of selection.
    pub residual_col: DVector<f64>,
}

impl CholeskyState {
    /// State for the exact path: reads Diag(K) and Diag(K²).
    pub fn new_exact(k: &dyn SymOperator, k_max: usize) -> Self {
        let n = k.dim();
        let d = k.diag();
        let w = k.diag_sq();
        Self::with_diagonals(n, k_max, d.clone(), w, d)
    }

    /// State for the matrix-free path: no diagonals are known up front.
    pub fn new_matrix_free(n: usize, k_max: usize) -> Self {
        Self::with_diagonals(
            n,
            k_max,
            DVector::zeros(n),
            DVector::zeros(n),
            DVector::zeros(n),
        )
    }

    fn with_diagonals(n: usize, k_max: usize, d: DVector<f64>, w: DVector<f64>, kdiag: DVector<f64>) -> Self {
        Self {
            n,
            k_max,
            u: DMatrix::zeros(k_max, n),
            s: DMatrix::zeros(n, k_max),
            d,
            w,
            kdiag,
            selected: Vec::with_capacity(k_max),
            in_set: vec![false; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn t(&self) -> usize {
        self.selected.len()
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn contains(&self, j: usize) -> bool {
        self.in_set[j]
    }

    pub fn kdiag(&self) -> &DVector<f64> {
        &self.kdiag
    }

    /// `S[:, :t]`.
    pub fn s_cols(&self) -> DMatrix<f64> {
        self.s.columns(0, self.t()).into_owned()
    }

    pub fn s_col(&self, c: usize) -> DVector<f64> {
        self.s.column(c).into_owned()
    }

    /// Full U storage (k_max × n).
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// `U[:t, I]` in selection order.
    pub fn u_selected(&self) -> DMatrix<f64> {
        let t = self.t();
        DMatrix::from_fn(t, t, |r, c| self.u[(r, self.selected[c])])
    }

    /// Whether column j passes the pivot guard in the exact path.
    pub fn eligible(&self, j: usize, guard: f64) -> bool {
        let dj = self.d[j];
        !self.in_set[j] && dj > 0.0 && dj >= guard * self.kdiag[j]
    }

    /// Select column j given `K e_j`. Performs the U, S updates (not d, w).
    pub fn pivot(&mut self, j: usize, kej: &DVector<f64>) -> Result<Pivot> {
        let t = self.t();
        if t >= self.k_max {
            return Err(Error::Invalid(format!("state capacity {} exhausted", self.k_max)));
        }
        if self.in_set[j] {
            return Err(Error::Invalid(format!("index {j} already selected")));
        }
        let mut v = kej.clone();
        if t > 0 {
            let srow: DVector<f64> = self.s.view((j, 0), (1, t)).transpose().column(0).into_owned();
            v.gemv(-1.0, &self.s.columns(0, t), &srow, 1.0);
        }
        let dj = v[j];
        if !(dj > 0.0) {
            return Err(Error::Breakdown(format!(
                "nonpositive pivot {dj:e} at step {t} (index {j})"
            )));
        }
        if self.kdiag[j] == 0.0 {
            self.kdiag[j] = kej[j];
        }
        let sq = dj.sqrt();
        self.u[(t, j)] = 1.0;
        for r in 0..=t {
            self.u[(r, j)] /= sq;
        }
        let s_t = &v * (-1.0 / sq);
        self.s.set_column(t, &s_t);
        self.selected.push(j);
        self.in_set[j] = true;
        let uj: Vec<f64> = (0..=t).map(|r| self.u[(r, j)]).collect();
        for m in 0..self.n {
            if self.in_set[m] {
                continue;
            }
            let sm = s_t[m];
            if sm != 0.0 {
                for (r, &ur) in uj.iter().enumerate() {
                    self.u[(r, m)] += ur * sm;
                }
            }
        }
        Ok(Pivot {
            index: j,
            dj,
            residual_col: v,
        })
    }

    /// Update d and w after the pivot at step `t−1`, given `K s_t`.
    /// Returns `K̃ s_t` with K̃ taken before the pivot.
    pub fn update_diagonals(&mut self, ks: &DVector<f64>) -> DVector<f64> {
        let t = self.t();
        let s_t = self.s.column(t - 1).into_owned();
        // f = K̃_old s = K s − S_{:,:t−1} S_{:,:t−1}ᵀ s
        let mut f = ks.clone();
        if t > 1 {
            let prev = self.s.columns(0, t - 1);
            let coef = prev.transpose() * &s_t;
            f.gemv(-1.0, &prev, &coef, 1.0);
        }
        let sts = s_t.norm_squared();
        for m in 0..self.n {
            let sm = s_t[m];
            self.d[m] -= sm * sm;
            self.w[m] += sts * sm * sm - 2.0 * f[m] * sm;
        }
        let j = self.selected[t - 1];
        self.d[j] = 0.0;
        self.w[j] = 0.0;
        f
    }
}

/// Knobs for the deterministic selectors.
#[derive(Clone, Copy, Debug)]
pub struct SelectOptions {
    pub guard: f64,
    /// Re-evaluate the objective from scratch after every step.
    pub debug_recompute: bool,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            guard: PIVOT_GUARD,
            debug_recompute: false,
        }
    }
}

/// Index of the largest score; ties within [`TIE_REL`] go to the lowest index.
pub fn argmax_tie(scores: impl IntoIterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in scores {
        if v.is_nan() {
            continue;
        }
        match best {
            None => best = Some((j, v)),
            Some((_, b)) => {
                if v > b + TIE_REL * b.abs() {
                    best = Some((j, v));
                }
            }
        }
    }
    best.map(|b| b.0)
}

/// Draw an index with probability proportional to nonnegative weights.
pub fn sample_weighted(rng: &mut rng::Rng, weights: &[(usize, f64)]) -> Option<usize> {
    let total: f64 = weights.iter().map(|w| w.1.max(0.0)).sum();
    if !(total > 0.0) {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for &(j, w) in weights {
        let w = w.max(0.0);
        if w > 0.0 {
            last = Some(j);
            if u < w {
                return Some(j);
            }
            u -= w;
        }
    }
    last
}

/// `Tr[K_{:,I} (K_{I,I})⁻¹ K_{I,:}]`.
pub fn objective_eval(k: &dyn SymOperator, idx: &[usize]) -> Result<f64> {
    objective_eval_tol(k, idx, PIVOT_GUARD)
}

pub fn objective_eval_tol(k: &dyn SymOperator, idx: &[usize], pivot_tol: f64) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let n = k.dim();
    let t = idx.len();
    let mut cols = DMatrix::zeros(n, t);
    for (c, &j) in idx.iter().enumerate() {
        if j >= n {
            return Err(Error::Invalid(format!("index {j} out of range")));
        }
        cols.set_column(c, &k.column(j));
    }
    let kii = DMatrix::from_fn(t, t, |a, b| cols[(idx[a], b)]);
    let kii = (&kii + kii.transpose()) * 0.5;
    let l = cholesky(&kii, pivot_tol).map_err(|e| match e {
        Error::SingularPivot { step, pivot, .. } => Error::SingularPivot {
            step,
            index: idx[step],
            pivot,
        },
        other => other,
    })?;
    let mut rows = cols.transpose();
    l.solve_lower_triangular_mut(&mut rows);
    Ok(rows.norm_squared())
}

enum Rule<'a> {
    Nuclear,
    DiagMax,
    DiagSample(&'a mut rng::Rng),
    Fixed(&'a [usize]),
}

fn run(k: &dyn SymOperator, kk: usize, mut rule: Rule<'_>, method: Method, opts: SelectOptions) -> Result<SelectionResult> {
    let n = k.dim();
    if kk > n {
        return Err(Error::Invalid(format!("k = {kk} exceeds n = {n}")));
    }
    let mut st = CholeskyState::new_exact(k, kk);
    let mut res = SelectionResult::new(method.name(), st.kdiag.sum());
    let mut recomputed = Vec::new();
    for step in 0..kk {
        let elig: Vec<usize> = (0..n).filter(|&j| st.eligible(j, opts.guard)).collect();
        let pick = match &mut rule {
            Rule::Nuclear => argmax_tie(elig.iter().map(|&j| (j, st.w[j] / st.d[j]))),
            Rule::DiagMax => argmax_tie(elig.iter().map(|&j| (j, st.d[j]))),
            Rule::DiagSample(r) => {
                let weights: Vec<(usize, f64)> = elig.iter().map(|&j| (j, st.d[j])).collect();
                let p = sample_weighted(r, &weights);
                if p.is_none() && step == 0 {
                    return Err(Error::Degenerate("diagonal has no positive mass".into()));
                }
                p
            }
            Rule::Fixed(order) => Some(order[step]),
        };
        let Some(j) = pick else {
            res.early_stop = Some(format!(
                "all remaining candidates excluded by the pivot guard after {step} steps"
            ));
            break;
        };
        if let Rule::Fixed(_) = rule {
            if !st.eligible(j, opts.guard) {
                // Column already spanned: it adds nothing and is not pivoted on.
                res.push(j, 0.0);
                if res.early_stop.is_none() {
                    res.early_stop = Some(format!("index {j} skipped by the pivot guard"));
                }
                if opts.debug_recompute {
                    recomputed.push(res.objective[res.len() - 1]);
                }
                continue;
            }
        }
        let gain = st.w[j] / st.d[j];
        let kej = k.column(j);
        st.pivot(j, &kej)?;
        let s_t = st.s_col(st.t() - 1);
        let ks = k.apply(&s_t);
        st.update_diagonals(&ks);
        res.push(j, gain);
        if opts.debug_recompute {
            recomputed.push(objective_eval(k, st.selected())?);
        }
    }
    if opts.debug_recompute {
        res.recomputed = Some(recomputed);
    }
    Ok(res)
}

/// Greedy nuclear maximization.
pub fn nuclear_max(k: &dyn SymOperator, kk: usize) -> Result<SelectionResult> {
    nuclear_max_with(k, kk, SelectOptions::default())
}

pub fn nuclear_max_with(k: &dyn SymOperator, kk: usize, opts: SelectOptions) -> Result<SelectionResult> {
    run(k, kk, Rule::Nuclear, Method::Nuclear, opts)
}

/// Pivoted Cholesky on the largest residual diagonal.
pub fn diagonal_max(k: &dyn SymOperator, kk: usize) -> Result<SelectionResult> {
    diagonal_max_with(k, kk, SelectOptions::default())
}

pub fn diagonal_max_with(k: &dyn SymOperator, kk: usize, opts: SelectOptions) -> Result<SelectionResult> {
    run(k, kk, Rule::DiagMax, Method::DiagMax, opts)
}

/// Pivoted Cholesky with pivots drawn proportionally to the residual diagonal.
pub fn diagonal_sample(k: &dyn SymOperator, kk: usize, seed: u64) -> Result<SelectionResult> {
    diagonal_sample_with(k, kk, seed, SelectOptions::default())
}

pub fn diagonal_sample_with(k: &dyn SymOperator, kk: usize, seed: u64, opts: SelectOptions) -> Result<SelectionResult> {
    let mut r = rng::rng(seed);
    let mut res = run(k, kk, Rule::DiagSample(&mut r), Method::DiagSample, opts)?;
    res.seed = Some(seed);
    Ok(res)
}

/// A uniformly random k-subset of 0..n, in draw order.
pub fn uniform_indices(n: usize, kk: usize, seed: u64) -> Result<Vec<usize>> {
    if kk > n {
        return Err(Error::Invalid(format!("k = {kk} exceeds n = {n}")));
    }
    let mut r = rng::rng(seed);
    Ok(sample(&mut r, n, kk).into_vec())
}

/// Uniform sampling without replacement; gains are the objective increments.
pub fn uniform_sample(k: &dyn SymOperator, kk: usize, seed: u64) -> Result<SelectionResult> {
    uniform_sample_with(k, kk, seed, SelectOptions::default())
}

pub fn uniform_sample_with(k: &dyn SymOperator, kk: usize, seed: u64, opts: SelectOptions) -> Result<SelectionResult> {
    let order = uniform_indices(k.dim(), kk, seed)?;
    let mut res = run(k, kk, Rule::Fixed(&order), Method::Uniform, opts)?;
    res.seed = Some(seed);
    Ok(res)
}

/// Dispatch on [`Method`].
pub fn select(k: &dyn SymOperator, method: Method, kk: usize, seed: u64) -> Result<SelectionResult> {
    match method {
        Method::Nuclear => nuclear_max(k, kk),
        Method::DiagMax => diagonal_max(k, kk),
        Method::DiagSample => diagonal_sample(k, kk, seed),
        Method::Uniform => uniform_sample(k, kk, seed),
    }
}

/// Cap on the number of subsets enumerated by the brute-force search.
pub const BRUTEFORCE_MAX_SUBSETS: f64 = 1e6;

/// Exact maximizer of the objective over all s-subsets.
pub fn optimal_subset_bruteforce(k: &dyn SymOperator, s: usize) -> Result<(Vec<usize>, f64)> {
    let n = k.dim();
    let count = crate::sympoly::binomial(n, s);
    if count > BRUTEFORCE_MAX_SUBSETS {
        return Err(Error::Guard(format!("C({n},{s}) = {count:e} subsets")));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    crate::sympoly::for_each_subset(n, s, |idx| {
        if let Ok(v) = objective_eval_tol(k, idx, 1e-12) {
            if best.as_ref().is_none_or(|b| v > b.1 + TIE_REL * b.1.abs()) {
                best = Some((idx.to_vec(), v));
            }
        }
    });
    best.ok_or_else(|| Error::RankDeficient(format!("no nonsingular {s}-subset")))
}
