//! CUR decomposition from independent row and column selections.
//!
//! Rows are chosen on `K_R = A Aᵀ` and columns on `K_C = AᵀA`, neither of
//! which is formed. With the Cholesky factors of each side, `Q_C = A_{:,J} U_C`
//! and `Q_R = A_{I,:}ᵀ U_R` are orthonormal, `A Q_R = −S_R`, and
//! `C U R = Q_C Q_Cᵀ A Q_R Q_Rᵀ`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linops::{FactoredOperator, GramOp, SparseMat, SymOperator};
use crate::select::{self, objective_eval, CholeskyState, Method, SelectionResult, PIVOT_GUARD};
use crate::sketch::{self, MatrixFreeOptions, DEFAULT_Z};

/// Largest m·n for which [`CURResult::assemble_dense`] runs.
pub const DENSE_ASSEMBLY_MAX: usize = 10_000_000;

/// Below this fraction of ‖A‖_F² the subtractive error formulas have lost
/// most of their digits, and the residual is summed row by row instead
/// (when m·n is at most [`DENSE_ASSEMBLY_MAX`]).
pub const CANCELLATION_REL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurMode {
    Deterministic,
    MatrixFree { z: usize },
}

impl Default for CurMode {
    fn default() -> Self {
        CurMode::MatrixFree { z: DEFAULT_Z }
    }
}

#[derive(Clone, Debug)]
pub struct CURResult {
    pub row_indices: Vec<usize>,
    pub col_indices: Vec<usize>,
    /// m × |I|
    pub s_r: DMatrix<f64>,
    /// |I| × |I|, upper triangular.
    pub u_r: DMatrix<f64>,
    /// n × |J|
    pub s_c: DMatrix<f64>,
    /// |J| × |J|, upper triangular.
    pub u_c: DMatrix<f64>,
    /// `‖A − CUR‖_F` from the closed form.
    pub frobenius_error: f64,
    pub row_selection: SelectionResult,
    pub col_selection: SelectionResult,
}

/// Operators for `AᵀA` (factor Aᵀ) and `AAᵀ` (factor A).
pub fn gram_operators(a: &SparseMat) -> Result<(FactoredOperator, FactoredOperator)> {
    if a.nnz() == 0 {
        return Err(Error::Invalid("A has no nonzero entries".into()));
    }
    Ok((
        FactoredOperator::from_sparse_factor(a.transpose()),
        FactoredOperator::from_sparse_factor(a.clone()),
    ))
}

/// `(AᵀA, AAᵀ)` as [`GramOp`]s, for the deterministic selectors.
pub fn gram_sym_operators(a: &SparseMat) -> (GramOp, GramOp) {
    (GramOp::new(Arc::new(a.transpose())), GramOp::new(Arc::new(a.clone())))
}

fn select_side(k: &GramOp, ops: &FactoredOperator, kk: usize, method: Method, mode: CurMode, seed: u64) -> Result<SelectionResult> {
    let mut res = match mode {
        CurMode::Deterministic => select::select(k, method, kk, seed)?,
        CurMode::MatrixFree { z } => {
            let opts = MatrixFreeOptions::new(z, seed).with_trace(k.diag().sum());
            sketch::select_matrix_free(ops, method, kk, opts)?
        }
    };
    res.trace = k.diag().sum();
    Ok(res)
}

/// Replay the pivots of a selection to recover `(indices, S, U)`. Indices
/// that fail the pivot guard are dropped.
fn factors(k: &GramOp, idx: &[usize]) -> Result<(Vec<usize>, DMatrix<f64>, DMatrix<f64>)> {
    let kdiag = k.diag();
    let mut st = CholeskyState::new_matrix_free(k.dim(), idx.len());
    for &j in idx {
        let kej = k.column(j);
        let v = sketch::residual_column(&st, j, &kej);
        if v[j] < PIVOT_GUARD * kdiag[j] || !(v[j] > 0.0) {
            continue;
        }
        st.pivot(j, &kej)?;
    }
    Ok((st.selected().to_vec(), st.s_cols(), st.u_selected()))
}

/// Run row and column selection and assemble the implicit CUR factors.
/// The two sides run on separate threads with seeds `seed` (rows) and
/// `seed + 1` (columns).
pub fn cur_decompose(
    a: &SparseMat,
    k_rows: usize,
    k_cols: usize,
    method: Method,
    mode: CurMode,
    seed: u64,
) -> Result<CURResult> {
    let (m, n) = (a.rows(), a.cols());
    if k_rows > m || k_cols > n {
        return Err(Error::Invalid(format!(
            "requested {k_rows} rows and {k_cols} columns of a {m}x{n} matrix"
        )));
    }
    let (col_ops, row_ops) = gram_operators(a)?;
    let (kc, kr) = gram_sym_operators(a);
    let (row_sel, col_sel) = std::thread::scope(|s| {
        let rows = s.spawn(|| select_side(&kr, &row_ops, k_rows, method, mode, seed));
        let cols = select_side(&kc, &col_ops, k_cols, method, mode, seed.wrapping_add(1));
        (rows.join().expect("row selection panicked"), cols)
    });
    let (row_sel, col_sel) = (row_sel?, col_sel?);
    let (ri, s_r, u_r) = factors(&kr, &row_sel.indices)?;
    let (ci, s_c, u_c) = factors(&kc, &col_sel.indices)?;
    let mut out = CURResult {
        row_indices: ri,
        col_indices: ci,
        s_r,
        u_r,
        s_c,
        u_c,
        frobenius_error: 0.0,
        row_selection: row_sel,
        col_selection: col_sel,
    };
    out.frobenius_error = out.guarded(a, closed_form_error(&out, a)).sqrt();
    Ok(out)
}

/// Dense `A_{:,J}`.
fn columns_of(a: &SparseMat, idx: &[usize]) -> DMatrix<f64> {
    let mut pos = vec![usize::MAX; a.cols()];
    for (c, &j) in idx.iter().enumerate() {
        pos[j] = c;
    }
    let mut out = DMatrix::zeros(a.rows(), idx.len());
    for (i, j, v) in a.iter() {
        if pos[j] != usize::MAX {
            out[(i, pos[j])] = v;
        }
    }
    out
}

/// Dense `A_{I,:}`.
fn rows_of(a: &SparseMat, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(idx.len(), a.cols());
    for (r, &i) in idx.iter().enumerate() {
        for (j, v) in a.row(i) {
            out[(r, j)] = v;
        }
    }
    out
}

/// `Σ_i ‖A_{i,:} − F_{i,:} G‖²`, one dense row at a time.
fn streamed_residual_sq(a: &SparseMat, f: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let gt = g.transpose();
    let mut tot = 0.0;
    for i in 0..a.rows() {
        let mut r = -(&gt * f.row(i).transpose());
        for (j, v) in a.row(i) {
            r[j] += v;
        }
        tot += r.norm_squared();
    }
    tot
}

/// `‖A‖_F² − ‖S_Rᵀ A_{:,J} U_C‖_F²`, clamped at 0.
fn closed_form_error(res: &CURResult, a: &SparseMat) -> f64 {
    let aj = columns_of(a, &res.col_indices);
    let core = res.s_r.transpose() * aj * &res.u_c;
    (a.frobenius_sq() - core.norm_squared()).max(0.0)
}

impl CURResult {
    /// The approximation as `F G` with `F = A_{:,J} U_C` (m × |J|) and
    /// `G = U_Cᵀ A_{:,J}ᵀ (−S_R) U_Rᵀ A_{I,:}` (|J| × n).
    pub fn factored(&self, a: &SparseMat) -> (DMatrix<f64>, DMatrix<f64>) {
        let aj = columns_of(a, &self.col_indices);
        let ai = rows_of(a, &self.row_indices);
        let f = &aj * &self.u_c;
        let g = f.transpose() * (-&self.s_r) * self.u_r.transpose() * ai;
        (f, g)
    }

    /// `‖A − F G‖_F` evaluated without forming the m × n product. Unlike
    /// the closed form this does not assume the stored factors are
    /// consistent.
    pub fn factored_error(&self, a: &SparseMat) -> f64 {
        let (f, g) = self.factored(a);
        // ⟨A, F G⟩ = Σ (Aᵀ F) ⊙ Gᵀ.
        let atf = a.mul_t_block(&f, crate::linops::DEFAULT_BLOCK_WIDTH);
        let cross = atf.component_mul(&g.transpose()).sum();
        let fg = (f.transpose() * &f).component_mul(&(&g * g.transpose())).sum();
        let sq = (a.frobenius_sq() - 2.0 * cross + fg).max(0.0);
        if sq < CANCELLATION_REL * a.frobenius_sq() && a.rows() * a.cols() <= DENSE_ASSEMBLY_MAX {
            return streamed_residual_sq(a, &f, &g).sqrt();
        }
        sq.sqrt()
    }

    /// `sq` unless it is small enough to be dominated by cancellation, in
    /// which case the residual is recomputed directly.
    fn guarded(&self, a: &SparseMat, sq: f64) -> f64 {
        if sq < CANCELLATION_REL * a.frobenius_sq() && a.rows() * a.cols() <= DENSE_ASSEMBLY_MAX {
            let (f, g) = self.factored(a);
            streamed_residual_sq(a, &f, &g)
        } else {
            sq
        }
    }

    /// Dense `C U R`, for small problems.
    pub fn assemble_dense(&self, a: &SparseMat) -> Result<DMatrix<f64>> {
        if a.rows() * a.cols() > DENSE_ASSEMBLY_MAX {
            return Err(Error::Guard(format!(
                "dense assembly of a {}x{} matrix exceeds {DENSE_ASSEMBLY_MAX} entries",
                a.rows(),
                a.cols()
            )));
        }
        let (f, g) = self.factored(a);
        Ok(f * g)
    }

    /// Copy keeping only the first `tr` row pivots and `tc` column pivots.
    /// Triangular U makes the truncated factors those of the shorter runs.
    pub fn prefix(&self, tr: usize, tc: usize) -> CURResult {
        let tr = tr.min(self.row_indices.len());
        let tc = tc.min(self.col_indices.len());
        let mut out = self.clone();
        out.row_indices.truncate(tr);
        out.col_indices.truncate(tc);
        out.s_r = self.s_r.columns(0, tr).into_owned();
        out.u_r = self.u_r.view((0, 0), (tr, tr)).into_owned();
        out.s_c = self.s_c.columns(0, tc).into_owned();
        out.u_c = self.u_c.view((0, 0), (tc, tc)).into_owned();
        out
    }

    /// Closed-form squared error after `t` rows and `t` columns, for
    /// `t = 1..=max(|I|, |J|)`, from one |I| × |J| core.
    pub fn prefix_errors_sq(&self, a: &SparseMat) -> Vec<f64> {
        let aj = columns_of(a, &self.col_indices);
        let core = self.s_r.transpose() * aj * &self.u_c;
        let tot = a.frobenius_sq();
        let steps = self.row_indices.len().max(self.col_indices.len());
        (1..=steps)
            .map(|t| {
                let (r, c) = (t.min(core.nrows()), t.min(core.ncols()));
                let sq = (tot - core.view((0, 0), (r, c)).norm_squared()).max(0.0);
                if sq < CANCELLATION_REL * tot {
                    self.prefix(r, c).guarded(a, sq)
                } else {
                    sq
                }
            })
            .collect()
    }

    /// `E_{AAᵀ}(I)`: row-side residual trace.
    pub fn row_error_sq(&self) -> f64 {
        self.row_selection.residual_trace.last().copied().unwrap_or(self.row_selection.trace)
    }

    /// `E_{AᵀA}(J)`: column-side residual trace.
    pub fn col_error_sq(&self) -> f64 {
        self.col_selection.residual_trace.last().copied().unwrap_or(self.col_selection.trace)
    }
}

/// `min_B ‖A_{:,J} B − A‖_F²`.
pub fn cx_error(a: &SparseMat, idx: &[usize]) -> Result<f64> {
    let k = GramOp::new(Arc::new(a.transpose()));
    let tr = a.frobenius_sq();
    if idx.is_empty() {
        return Ok(tr);
    }
    let obj = objective_eval(&k, idx).map_err(|e| match e {
        Error::SingularPivot { index, .. } => {
            Error::RankDeficient(format!("A[:, J] is rank deficient at column {index}"))
        }
        other => other,
    })?;
    Ok((tr - obj).max(0.0))
}

/// `‖A − CUR‖_F ≤ √E_row + √E_col`, with the left side recomputed from the
/// stored factors.
pub fn triangle_bound_check(res: &CURResult, a: &SparseMat) -> bool {
    let err = res.factored_error(a);
    let bound = res.row_error_sq().max(0.0).sqrt() + res.col_error_sq().max(0.0).sqrt();
    err <= bound + 1e-8 * a.frobenius_sq().sqrt()
}

/// Per-step residuals `(E_row, E_col)` from both selections; the shorter
/// side is padded with its final value.
pub fn per_step_errors(res: &CURResult) -> Vec<(usize, f64, f64)> {
    let r = &res.row_selection.residual_trace;
    let c = &res.col_selection.residual_trace;
    let steps = r.len().max(c.len());
    let pick = |v: &Vec<f64>, t: usize, tr: f64| -> f64 {
        if v.is_empty() {
            tr
        } else {
            v[t.min(v.len() - 1)]
        }
    };
    (0..steps)
        .map(|t| (t + 1, pick(r, t, res.row_selection.trace), pick(c, t, res.col_selection.trace)))
        .collect()
}

/// Row sums of squares, used by callers reporting `‖A‖_F`.
pub fn row_norms_sq(a: &SparseMat) -> DVector<f64> {
    DVector::from_fn(a.rows(), |i, _| a.row(i).map(|(_, v)| v * v).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_full_rank() {
        let a = SparseMat::identity(3);
        let res = cur_decompose(&a, 3, 3, Method::Nuclear, CurMode::Deterministic, 0).unwrap();
        assert!(res.frobenius_error < 1e-12);
        assert!(triangle_bound_check(&res, &a));
    }

    #[test]
    fn empty_cx_is_norm() {
        let a = SparseMat::from_triplets(2, 2, &[(0, 0, 3.0), (1, 1, 4.0)]).unwrap();
        assert_eq!(cx_error(&a, &[]).unwrap(), 25.0);
        assert!(cx_error(&a, &[0, 1]).unwrap() < 1e-12);
    }
}
