use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative tolerance for the SPSD eigenvalue check.
pub const TOL_PSD: f64 = 1e-10;

/// Dense symmetric matrix. Symmetry is exact: construction rejects any
/// asymmetric input rather than silently symmetrizing it.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSym {
    m: DMatrix<f64>,
}

impl DenseSym {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let n = m.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::Invalid(format!(
                        "asymmetric entry ({i},{j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(Self { m })
    }

    /// Build from the lower triangle, mirroring it into the upper one.
    pub fn from_lower(mut m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let n = m.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                m[(j, i)] = m[(i, j)];
            }
        }
        Ok(Self { m })
    }

    /// Average with the transpose. Use for products like `X Xᵀ` whose
    /// rounding leaves tiny asymmetries.
    pub fn symmetrize(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let s = (&m + m.transpose()) * 0.5;
        Self::from_lower(s)
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self { m }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: DMatrix::identity(n, n),
        }
    }

    pub fn from_diag(d: &[f64]) -> Self {
        Self {
            m: DMatrix::from_diagonal(&DVector::from_column_slice(d)),
        }
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sym_eig(&self.m).0
    }

    /// Check all eigenvalues are ≥ −tol·‖A‖₂.
    pub fn check_spsd(&self, tol: f64) -> Result<()> {
        let ev = self.eigenvalues();
        let norm = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if let Some(min) = ev.last() {
            if *min < -tol * norm {
                return Err(Error::Invalid(format!(
                    "not positive semidefinite: eigenvalue {min:e} below -{tol:e}*{norm:e}"
                )));
            }
        }
        Ok(())
    }

    /// Principal submatrix `A[I, I]`.
    pub fn principal(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.m[(idx[a], idx[b])])
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted descending and
/// eigenvectors permuted to match.
pub fn sym_eig(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let se = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[j].total_cmp(&se.eigenvalues[i]));
    let vals = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| se.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Lower Cholesky factor of an SPD matrix. A pivot below `rel_tol` times
/// the original diagonal entry is reported with its position.
pub fn cholesky(a: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let row: DVector<f64> = l.view((j, 0), (1, j)).transpose().column(0).into_owned();
        let mut col: DVector<f64> = a.view((j, j), (n - j, 1)).column(0).into_owned();
        if j > 0 {
            col.gemv(-1.0, &l.view((j, 0), (n - j, j)), &row, 1.0);
        }
        let p = col[0];
        if !(p > rel_tol * a[(j, j)].abs()) || !(p > 0.0) {
            return Err(Error::SingularPivot {
                step: j,
                index: j,
                pivot: p,
            });
        }
        col /= p.sqrt();
        l.view_mut((j, j), (n - j, 1)).copy_from(&col);
    }
    Ok(l)
}

/// Solve `L X = B` in place for lower-triangular `L`.
pub fn solve_lower_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    l.solve_lower_triangular_mut(b);
}

/// Solve `Lᵀ X = B` in place for lower-triangular `L`.
pub fn solve_lower_t_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    l.tr_solve_lower_triangular_mut(b);
}

/// Moore–Penrose pseudoinverse of a symmetric matrix, treating eigenvalues
/// below `rel_tol·λ_max` as zero.
pub fn pinv_sym(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eig(a);
    let top = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (i, &v) in vals.iter().enumerate() {
        if v.abs() > rel_tol * top {
            let q = vecs.column(i);
            out += (q * q.transpose()) / v;
        }
    }
    out
}

/// Modified Gram–Schmidt, in place. Returns the number of columns that were
/// numerically independent; dependent columns are zeroed.
pub fn mgs(x: &mut DMatrix<f64>) -> usize {
    let mut rank = 0;
    for j in 0..x.ncols() {
        let scale = x.column(j).norm();
        for i in 0..j {
            let (qi, mut xj) = x.columns_range_pair_mut(i, j);
            let r = qi.dot(&xj);
            xj.axpy(-r, &qi, 1.0);
        }
        let nrm = x.column(j).norm();
        if nrm > 1e-13 * scale.max(f64::MIN_POSITIVE) && nrm > 0.0 {
            x.column_mut(j).scale_mut(1.0 / nrm);
            rank += 1;
        } else {
            x.column_mut(j).fill(0.0);
        }
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.000001, 1.0]);
        assert!(DenseSym::new(m).is_err());
    }

    #[test]
    fn cholesky_reports_pivot() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        match cholesky(&m, 1e-12) {
            Err(Error::SingularPivot { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected singular pivot, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_roundtrip() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 1.0, 2.0, 3.0, 0.5, 1.0, 0.5, 2.0]);
        let l = cholesky(&m, 1e-12).unwrap();
        assert!((&l * l.transpose() - &m).norm() < 1e-12);
        let mut b = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let orig = b.clone();
        solve_lower_in_place(&l, &mut b);
        solve_lower_t_in_place(&l, &mut b);
        assert!((&m * b - orig).norm() < 1e-12);
    }

    #[test]
    fn eig_sorted_descending() {
        let a = DenseSym::from_diag(&[1.0, 5.0, 3.0]);
        assert_eq!(a.eigenvalues(), vec![5.0, 3.0, 1.0]);
    }

    #[test]
    fn mgs_orthonormal() {
        let mut x = DMatrix::from_fn(6, 3, |i, j| ((i * 3 + j * 7) % 5) as f64 + 0.1 * i as f64);
        assert_eq!(mgs(&mut x), 3);
        let g = x.transpose() * &x;
        assert!((g - DMatrix::identity(3, 3)).norm() < 1e-12);
    }
}
