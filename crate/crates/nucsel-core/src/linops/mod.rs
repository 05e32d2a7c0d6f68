//! Matrix and operator substrate.
//!
//! Everything downstream talks to matrices through [`LinearOperator`]; the
//! selection routines that need diagonals or single columns use the
//! [`SymOperator`] extension.

mod dense;
mod sparse;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use dense::{
    cholesky, mgs, pinv_sym, solve_lower_in_place, solve_lower_t_in_place, sym_eig, DenseSym,
    TOL_PSD,
};
pub use sparse::{SparseMat, DEFAULT_BLOCK_WIDTH};

use crate::error::{Error, Result};

/// Matvec access to a (possibly implicit) matrix. Implementations are
/// immutable and deterministic.
///
/// `apply` and `apply_block` assume correctly sized inputs and panic
/// otherwise; [`matvec`] and [`matvec_block`] check dimensions first.
pub trait LinearOperator: Send + Sync {
    fn out_dim(&self) -> usize;
    fn in_dim(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;

    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.out_dim(), x.ncols());
        for c in 0..x.ncols() {
            out.set_column(c, &self.apply(&x.column(c).into_owned()));
        }
        out
    }
}

/// Symmetric operators that can also report diagonals and columns.
pub trait SymOperator: LinearOperator {
    fn dim(&self) -> usize {
        self.out_dim()
    }

    fn column(&self, j: usize) -> DVector<f64> {
        let mut e = DVector::zeros(self.in_dim());
        e[j] = 1.0;
        self.apply(&e)
    }

    fn diag(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |j, _| self.column(j)[j])
    }

    /// Diag(K²), i.e. squared column norms.
    fn diag_sq(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |j, _| self.column(j).norm_squared())
    }

    fn trace(&self) -> f64 {
        self.diag().sum()
    }
}

/// Checked matvec.
pub fn matvec(op: &dyn LinearOperator, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != op.in_dim() {
        return Err(Error::Dim(format!(
            "operator takes {} entries, got {}",
            op.in_dim(),
            x.len()
        )));
    }
    Ok(op.apply(x))
}

/// Checked block matvec.
pub fn matvec_block(op: &dyn LinearOperator, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != op.in_dim() {
        return Err(Error::Dim(format!(
            "operator takes {} rows, got {}",
            op.in_dim(),
            x.nrows()
        )));
    }
    Ok(op.apply_block(x))
}

/// (Diag(K), Diag(K²)) of an explicit square matrix.
pub fn diag_and_diag_sq(k: &dyn SymOperator) -> (DVector<f64>, DVector<f64>) {
    (k.diag(), k.diag_sq())
}

/// As [`diag_and_diag_sq`] for a sparse matrix that must be square.
pub fn diag_and_diag_sq_sparse(k: &SparseMat) -> Result<(DVector<f64>, DVector<f64>)> {
    if k.rows() != k.cols() {
        return Err(Error::NotSquare {
            rows: k.rows(),
            cols: k.cols(),
        });
    }
    Ok(diag_and_diag_sq(k))
}

/// Identity of a given size.
#[derive(Clone, Debug)]
pub struct IdentityOp(pub usize);

impl LinearOperator for IdentityOp {
    fn out_dim(&self) -> usize {
        self.0
    }
    fn in_dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x.clone()
    }
}

impl SymOperator for IdentityOp {
    fn diag(&self) -> DVector<f64> {
        DVector::from_element(self.0, 1.0)
    }
    fn diag_sq(&self) -> DVector<f64> {
        DVector::from_element(self.0, 1.0)
    }
}

impl LinearOperator for DenseSym {
    fn out_dim(&self) -> usize {
        self.n()
    }
    fn in_dim(&self) -> usize {
        self.n()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.matrix() * x
    }
    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.matrix() * x
    }
}

impl SymOperator for DenseSym {
    fn column(&self, j: usize) -> DVector<f64> {
        self.matrix().column(j).into_owned()
    }
    fn diag(&self) -> DVector<f64> {
        self.matrix().diagonal()
    }
    fn diag_sq(&self) -> DVector<f64> {
        DVector::from_fn(self.n(), |j, _| self.matrix().column(j).norm_squared())
    }
}

/// General dense matrix as an operator.
#[derive(Clone, Debug)]
pub struct DenseOp(pub DMatrix<f64>);

impl LinearOperator for DenseOp {
    fn out_dim(&self) -> usize {
        self.0.nrows()
    }
    fn in_dim(&self) -> usize {
        self.0.ncols()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.0 * x
    }
    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.0 * x
    }
}

impl LinearOperator for SparseMat {
    fn out_dim(&self) -> usize {
        self.rows()
    }
    fn in_dim(&self) -> usize {
        self.cols()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.rows());
        self.mul_vec(x.as_slice(), y.as_mut_slice());
        y
    }
    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.mul_block(x, DEFAULT_BLOCK_WIDTH)
    }
}

/// A symmetric sparse matrix. Columns are read as rows (valid by symmetry).
impl SymOperator for SparseMat {
    fn column(&self, j: usize) -> DVector<f64> {
        let mut c = DVector::zeros(self.rows());
        for (i, v) in self.row(j) {
            c[i] = v;
        }
        c
    }
    fn diag(&self) -> DVector<f64> {
        SparseMat::diag(self)
    }
    fn diag_sq(&self) -> DVector<f64> {
        let mut d = DVector::zeros(self.rows());
        for (i, _, v) in self.iter() {
            d[i] += v * v;
        }
        d
    }
}

/// Transpose view of a sparse matrix.
#[derive(Clone, Debug)]
pub struct SparseTransposeOp(pub Arc<SparseMat>);

impl LinearOperator for SparseTransposeOp {
    fn out_dim(&self) -> usize {
        self.0.cols()
    }
    fn in_dim(&self) -> usize {
        self.0.rows()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.0.cols());
        self.0.mul_t_vec(x.as_slice(), y.as_mut_slice());
        y
    }
    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.0.mul_t_block(x, DEFAULT_BLOCK_WIDTH)
    }
}

/// K = C Cᵀ for a sparse factor C (n×m), applied as two chained products.
#[derive(Clone, Debug)]
pub struct GramOp {
    c: Arc<SparseMat>,
}

impl GramOp {
    pub fn new(c: Arc<SparseMat>) -> Self {
        Self { c }
    }

    pub fn factor(&self) -> &Arc<SparseMat> {
        &self.c
    }
}

impl LinearOperator for GramOp {
    fn out_dim(&self) -> usize {
        self.c.rows()
    }
    fn in_dim(&self) -> usize {
        self.c.rows()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut t = vec![0.0; self.c.cols()];
        self.c.mul_t_vec(x.as_slice(), &mut t);
        let mut y = DVector::zeros(self.c.rows());
        self.c.mul_vec(&t, y.as_mut_slice());
        y
    }
    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let t = self.c.mul_t_block(x, DEFAULT_BLOCK_WIDTH);
        self.c.mul_block(&t, DEFAULT_BLOCK_WIDTH)
    }
}

impl SymOperator for GramOp {
    fn column(&self, j: usize) -> DVector<f64> {
        let mut t = vec![0.0; self.c.cols()];
        for (k, v) in self.c.row(j) {
            t[k] = v;
        }
        let mut y = DVector::zeros(self.c.rows());
        self.c.mul_vec(&t, y.as_mut_slice());
        y
    }
    fn diag(&self) -> DVector<f64> {
        DVector::from_fn(self.c.rows(), |i, _| self.c.row(i).map(|(_, v)| v * v).sum())
    }
    /// Diag(C G Cᵀ) with G = CᵀC, computed in row blocks of C.
    fn diag_sq(&self) -> DVector<f64> {
        let n = self.c.rows();
        let m = self.c.cols();
        // G = CᵀC as dense m×m.
        let mut g = DMatrix::zeros(m, m);
        let chunk = 256;
        let mut c0 = 0;
        while c0 < n {
            let w = chunk.min(n - c0);
            let rows = dense_rows_t(&self.c, c0, w);
            g.gemm(1.0, &rows, &rows.transpose(), 1.0);
            c0 += w;
        }
        let mut d = DVector::zeros(n);
        let mut c0 = 0;
        while c0 < n {
            let w = chunk.min(n - c0);
            let rows = dense_rows_t(&self.c, c0, w);
            let gr = &g * &rows;
            for r in 0..w {
                d[c0 + r] = rows.column(r).dot(&gr.column(r));
            }
            c0 += w;
        }
        d
    }
}

/// Rows `c0..c0+w` of `c`, transposed into a dense m×w block.
fn dense_rows_t(c: &SparseMat, c0: usize, w: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(c.cols(), w);
    for r in 0..w {
        for (k, v) in c.row(c0 + r) {
            out[(k, r)] = v;
        }
    }
    out
}

/// Whether K = C Cᵀ holds exactly or only approximately.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Exact,
    Approximate,
}

/// Paired operators K and C with K = C Cᵀ.
#[derive(Clone)]
pub struct FactoredOperator {
    pub k_op: Arc<dyn LinearOperator>,
    pub c_op: Arc<dyn LinearOperator>,
    pub relation: Relation,
}

impl FactoredOperator {
    pub fn new(
        k_op: Arc<dyn LinearOperator>,
        c_op: Arc<dyn LinearOperator>,
        relation: Relation,
    ) -> Result<Self> {
        if k_op.in_dim() != k_op.out_dim() {
            return Err(Error::NotSquare {
                rows: k_op.out_dim(),
                cols: k_op.in_dim(),
            });
        }
        if c_op.out_dim() != k_op.out_dim() {
            return Err(Error::Dim(format!(
                "C has {} rows but K has dimension {}",
                c_op.out_dim(),
                k_op.out_dim()
            )));
        }
        Ok(Self {
            k_op,
            c_op,
            relation,
        })
    }

    /// K = C Cᵀ from a sparse factor, both sides sharing storage.
    pub fn from_sparse_factor(c: SparseMat) -> Self {
        let c = Arc::new(c);
        Self {
            k_op: Arc::new(GramOp::new(c.clone())),
            c_op: c,
            relation: Relation::Exact,
        }
    }

    /// Explicit dense K and C.
    pub fn from_dense(k: DenseSym, c: DMatrix<f64>) -> Result<Self> {
        Self::new(Arc::new(k), Arc::new(DenseOp(c)), Relation::Exact)
    }

    pub fn dim(&self) -> usize {
        self.k_op.out_dim()
    }

    /// Largest ‖Kx − C(Cᵀx)‖ / ‖x‖ over random Gaussian probes. Needs an
    /// explicit Cᵀ, passed as `ct`.
    pub fn factor_residual(&self, ct: &dyn LinearOperator, probes: usize, seed: u64) -> f64 {
        let mut rng = crate::rng::rng(seed);
        let mut worst = 0.0f64;
        for _ in 0..probes {
            let x = crate::rng::gaussian_vec(&mut rng, self.dim());
            let kx = self.k_op.apply(&x);
            let ccx = self.c_op.apply(&ct.apply(&x));
            worst = worst.max((kx - ccx).norm() / x.norm());
        }
        worst
    }
}

/// Options for [`top_eigenvalues`].
#[derive(Clone, Copy, Debug)]
pub struct SubspaceOptions {
    /// Extra block columns beyond r.
    pub oversample: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SubspaceOptions {
    fn default() -> Self {
        Self {
            oversample: 4,
            max_iter: 5000,
            seed: 0x5eed,
        }
    }
}

/// Top-r eigenvalues of a symmetric operator by subspace iteration with
/// Rayleigh–Ritz. Stops once every tracked value moves by less than `tol`
/// between iterations.
pub fn top_eigenvalues(op: &dyn LinearOperator, r: usize, tol: f64) -> Result<Vec<f64>> {
    top_eigenvalues_with(op, r, tol, SubspaceOptions::default())
}

pub fn top_eigenvalues_with(
    op: &dyn LinearOperator,
    r: usize,
    tol: f64,
    opts: SubspaceOptions,
) -> Result<Vec<f64>> {
    let n = op.out_dim();
    if op.in_dim() != n {
        return Err(Error::NotSquare {
            rows: n,
            cols: op.in_dim(),
        });
    }
    if r == 0 || r > n {
        return Err(Error::Invalid(format!("need 1 <= r <= {n}, got {r}")));
    }
    let p = (r + opts.oversample).min(n);
    let mut rng = crate::rng::rng(opts.seed);
    let mut x = crate::rng::gaussian_matrix(&mut rng, n, p);
    mgs(&mut x);
    let mut prev: Option<Vec<f64>> = None;
    let mut last_change = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let y = op.apply_block(&x);
        let h = x.transpose() * &y;
        let h = (&h + h.transpose()) * 0.5;
        let (vals, vecs) = sym_eig(&h);
        let top: Vec<f64> = vals[..r].to_vec();
        if let Some(pv) = &prev {
            last_change = top
                .iter()
                .zip(pv)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if last_change < tol {
                return Ok(top);
            }
        }
        prev = Some(top);
        x = y * vecs;
        if mgs(&mut x) < p {
            // Invariant subspace smaller than the block: refill dead columns.
            for c in 0..p {
                if x.column(c).norm() == 0.0 {
                    let g = crate::rng::gaussian_vec(&mut rng, n);
                    x.set_column(c, &g);
                }
            }
            mgs(&mut x);
        }
    }
    Err(Error::NoConvergence {
        iters: opts.max_iter,
        residual: last_change,
        best: prev.unwrap_or_default(),
    })
}

fn deflate(x: &mut DVector<f64>, null: Option<&DVector<f64>>) {
    if let Some(v) = null {
        let c = v.dot(x) / v.norm_squared();
        x.axpy(-c, v, 1.0);
    }
}

/// Conjugate gradients on an SPSD operator, with optional deflation of a
/// null vector from every iterate.
pub fn cg(
    op: &dyn LinearOperator,
    b: &DVector<f64>,
    null: Option<&DVector<f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let mut r = b.clone();
    deflate(&mut r, null);
    let bn = r.norm();
    let mut x = DVector::zeros(b.len());
    if bn == 0.0 {
        return Ok(x);
    }
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    for _ in 0..max_iter {
        let mut ap = op.apply(&p);
        deflate(&mut ap, null);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(Error::Breakdown(format!(
                "CG curvature {pap:e} is not positive"
            )));
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        deflate(&mut r, null);
        let rr_new = r.norm_squared();
        if rr_new.sqrt() <= tol * bn {
            deflate(&mut x, null);
            return Ok(x);
        }
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
    }
    Err(Error::NoConvergence {
        iters: max_iter,
        residual: rr.sqrt() / bn,
        best: x.as_slice().to_vec(),
    })
}

/// λ_max / λ_min⁺ of an SPSD operator by power and inverse-power iteration,
/// after deflating `null_vec` if given.
pub fn condition_estimate(op: &dyn LinearOperator, null_vec: Option<&DVector<f64>>) -> Result<f64> {
    let (lo, hi) = spectral_interval(op, null_vec)?;
    Ok(hi / lo)
}

/// (λ_min⁺, λ_max) of an SPSD operator on the complement of `null_vec`.
pub fn spectral_interval(
    op: &dyn LinearOperator,
    null_vec: Option<&DVector<f64>>,
) -> Result<(f64, f64)> {
    let n = op.out_dim();
    let max_iter = 20_000;
    let rel = 1e-13;
    let mut rng = crate::rng::rng(0xc0ffee);
    let start = |rng: &mut crate::rng::Rng| {
        let mut x = crate::rng::gaussian_vec(rng, n);
        deflate(&mut x, null_vec);
        let nrm = x.norm();
        x / nrm
    };

    let mut x = start(&mut rng);
    let mut hi = 0.0;
    for it in 0..max_iter {
        let mut y = op.apply(&x);
        deflate(&mut y, null_vec);
        let lam = x.dot(&y);
        let nrm = y.norm();
        if nrm == 0.0 {
            return Err(Error::Degenerate("operator vanishes on the probe space".into()));
        }
        x = y / nrm;
        if it > 0 && (lam - hi).abs() <= rel * lam.abs() {
            hi = lam;
            break;
        }
        hi = lam;
    }

    let mut x = start(&mut rng);
    let mut lo = f64::INFINITY;
    for it in 0..max_iter {
        let y = cg(op, &x, null_vec, 1e-13, 20 * n + 100).map_err(|e| {
            Error::RankDeficient(format!("inverse iteration failed ({e}); singular beyond the declared null space"))
        })?;
        let nrm = y.norm();
        let y = y / nrm;
        let mut ay = op.apply(&y);
        deflate(&mut ay, null_vec);
        let lam = y.dot(&ay);
        x = y;
        if it > 0 && (lam - lo).abs() <= rel * lam.abs() {
            lo = lam;
            break;
        }
        lo = lam;
    }
    if !(lo > 1e-14 * hi) {
        return Err(Error::RankDeficient(format!(
            "smallest eigenvalue {lo:e} is numerically zero relative to {hi:e}"
        )));
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matvec() {
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(matvec(&IdentityOp(3), &x).unwrap(), x);
    }

    #[test]
    fn dense_matvec_reads_row() {
        let k = DenseSym::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let y = matvec(&k, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(y.as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        assert!(matvec(&IdentityOp(3), &DVector::zeros(2)).is_err());
        assert!(matvec_block(&IdentityOp(3), &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn diag_pairs() {
        let (d, w) = diag_and_diag_sq(&DenseSym::identity(3));
        assert_eq!(d.as_slice(), &[1.0; 3]);
        assert_eq!(w.as_slice(), &[1.0; 3]);
        let (d, w) = diag_and_diag_sq(&DenseSym::from_diag(&[2.0, 3.0]));
        assert_eq!(d.as_slice(), &[2.0, 3.0]);
        assert_eq!(w.as_slice(), &[4.0, 9.0]);
    }

    #[test]
    fn non_square_sparse_rejected() {
        let a = SparseMat::from_triplets(2, 3, &[(0, 0, 1.0)]).unwrap();
        assert!(diag_and_diag_sq_sparse(&a).is_err());
    }

    #[test]
    fn eigen_small_cases() {
        let v = top_eigenvalues(&DenseSym::from_diag(&[5.0, 3.0, 1.0]), 2, 1e-10).unwrap();
        assert!((v[0] - 5.0).abs() < 1e-9 && (v[1] - 3.0).abs() < 1e-9);
        let v = top_eigenvalues(&DenseSym::identity(6), 3, 1e-10).unwrap();
        assert!(v.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn condition_small_cases() {
        let c = condition_estimate(&DenseSym::from_diag(&[4.0, 1.0]), None).unwrap();
        assert!((c - 4.0).abs() < 1e-9);
        let c = condition_estimate(&DenseSym::identity(3), None).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_beyond_null_space_errors() {
        let k = DenseSym::from_diag(&[2.0, 1.0, 0.0]);
        assert!(condition_estimate(&k, None).is_err());
        let e = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let c = condition_estimate(&k, Some(&e)).unwrap();
        assert!((c - 2.0).abs() < 1e-9);
    }

    #[test]
    fn gram_op_matches_dense() {
        let c = SparseMat::from_triplets(4, 3, &[(0, 0, 1.0), (1, 0, 2.0), (1, 2, -1.0), (3, 1, 0.5), (2, 2, 3.0)])
            .unwrap();
        let k = GramOp::new(Arc::new(c.clone()));
        let dense = c.to_dense() * c.to_dense().transpose();
        let x = DMatrix::from_fn(4, 3, |i, j| (i as f64) - (j as f64) * 0.5);
        assert!((k.apply_block(&x) - &dense * &x).norm() < 1e-13);
        assert!((k.diag() - dense.diagonal()).norm() < 1e-13);
        let dsq = DVector::from_fn(4, |j, _| dense.column(j).norm_squared());
        assert!((k.diag_sq() - dsq).norm() < 1e-12);
        assert!((k.column(1) - dense.column(1)).norm() < 1e-13);
    }
}
