//! Rescaled graph Laplacians and reduction of their pseudoinverses.
//!
//! A rescaled Laplacian is `L = Diag(h⁻¹) L̄ Diag(h⁻¹)` for a graph Laplacian
//! `L̄`, with positive unit null vector h. The quantity of interest is
//! `K = L⁺`, approximated by selecting columns so as to maximize
//! [`laplacian_objective_eval`].

mod cheb;
mod greedy;
mod pcg;
mod precon;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linops::{cholesky, solve_lower_in_place, DenseSym, SparseMat};

pub use cheb::{cheb_bound, cheb_coefficients, cheb_degree, cheb_inv_sqrt_block, cheb_inv_sqrt_matvec};
pub use greedy::{
    laplacian_optimal_bruteforce, nuclear_max_laplacian_exact, nuclear_max_laplacian_matrix_free,
    select_laplacian_exact, select_laplacian_matrix_free, LaplacianOps, LaplacianState,
};
pub use pcg::{pcg_iteration_cap, pinv_block, pinv_matvec, DEFAULT_PCG_TOL};
pub use precon::{default_precon, BOperator, PreconFactor, PreconMode, EXACT_PRECON_MAX_N};

/// Largest n for which `K = L⁺` is formed densely.
pub const DENSE_PINV_MAX_N: usize = 2000;

/// Laplacian L with its stationary vector h.
#[derive(Clone, Debug)]
pub struct RescaledLaplacian {
    l: Arc<SparseMat>,
    h: DVector<f64>,
}

impl RescaledLaplacian {
    /// Wrap `(L, h)` after checking every invariant.
    pub fn new(l: SparseMat, h: DVector<f64>) -> Result<Self> {
        let lap = Self { l: Arc::new(l), h };
        lap.validate()?;
        Ok(lap)
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.l;
        let n = l.rows();
        if l.cols() != n {
            return Err(Error::NotSquare {
                rows: n,
                cols: l.cols(),
            });
        }
        if self.h.len() != n {
            return Err(Error::Dim(format!("h has length {} but L is {n}x{n}", self.h.len())));
        }
        if n < 2 {
            return Err(Error::Invalid("a Laplacian needs at least two nodes".into()));
        }
        if let Some(i) = self.h.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Invalid(format!("h[{i}] = {} is not positive", self.h[i])));
        }
        if (self.h.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("‖h‖ = {} is not 1", self.h.norm())));
        }
        let fro = l.frobenius_sq().sqrt();
        if l.asymmetry() > 1e-12 * fro {
            return Err(Error::Invalid("L is not symmetric".into()));
        }
        if let Some(i) = l.diag().iter().position(|&v| v < 0.0) {
            return Err(Error::Invalid(format!("negative diagonal entry at {i}")));
        }
        let mut lh = vec![0.0; n];
        l.mul_vec(self.h.as_slice(), &mut lh);
        let res = lh.iter().map(|v| v * v).sum::<f64>().sqrt();
        if res > 1e-10 * fro {
            return Err(Error::Invalid(format!("‖L h‖ = {res:e} exceeds 1e-10·‖L‖_F = {:e}", 1e-10 * fro)));
        }
        if l.components() != 1 {
            return Err(Error::Invalid(format!("graph has {} connected components", l.components())));
        }
        Ok(())
    }

    /// Laplacian of a reversible rate matrix: `h = √π`,
    /// `L = −Diag(h) R Diag(h⁻¹)`.
    pub fn from_rate_matrix(rates: &SparseMat, pi: &DVector<f64>) -> Result<Self> {
        let n = rates.rows();
        if rates.cols() != n {
            return Err(Error::NotSquare {
                rows: n,
                cols: rates.cols(),
            });
        }
        if pi.len() != n {
            return Err(Error::Dim(format!("π has length {} but R is {n}x{n}", pi.len())));
        }
        if pi.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Invalid("π must be strictly positive".into()));
        }
        if (pi.sum() - 1.0).abs() > 1e-10 {
            return Err(Error::Invalid(format!("π sums to {}", pi.sum())));
        }
        let scale = rates.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            let mut sum = 0.0;
            for (j, v) in rates.row(i) {
                sum += v;
                if j != i && v < 0.0 {
                    return Err(Error::Invalid(format!("negative rate R[{i},{j}] = {v}")));
                }
            }
            if sum.abs() > 1e-10 * scale.max(1.0) {
                return Err(Error::Invalid(format!("row {i} of R sums to {sum:e}")));
            }
        }
        let flux_scale = rates
            .iter()
            .filter(|&(i, j, _)| i != j)
            .fold(0.0f64, |m, (i, _, v)| m.max((pi[i] * v).abs()));
        for (i, j, v) in rates.iter() {
            if i != j {
                let gap = (pi[i] * v - pi[j] * rates.get(j, i)).abs();
                if gap > 1e-10 * flux_scale.max(f64::MIN_POSITIVE) {
                    return Err(Error::Invalid(format!(
                        "detailed balance fails between {i} and {j} (gap {gap:e})"
                    )));
                }
            }
        }
        let mut h = pi.map(f64::sqrt);
        let nrm = h.norm();
        h /= nrm;
        // Average the two triangles so L is exactly symmetric.
        let mut trips = Vec::with_capacity(rates.nnz());
        for (i, j, v) in rates.iter() {
            let a = -h[i] * v / h[j];
            let b = -h[j] * rates.get(j, i) / h[i];
            trips.push((i, j, 0.5 * (a + b)));
        }
        Self::new(SparseMat::from_triplets(n, n, &trips)?, h)
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn l(&self) -> &SparseMat {
        &self.l
    }

    pub fn l_arc(&self) -> Arc<SparseMat> {
        self.l.clone()
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    /// Stationary distribution `π = h⊙h`.
    pub fn pi(&self) -> DVector<f64> {
        self.h.component_mul(&self.h)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.l.to_dense()
    }

    /// `x − h hᵀ x`.
    pub fn project(&self, x: &mut DVector<f64>) {
        let c = self.h.dot(x);
        x.axpy(-c, &self.h, 1.0);
    }
}

/// `K = L⁺ = (L + h hᵀ)⁻¹ − h hᵀ`, formed densely.
pub fn dense_pinv(lap: &RescaledLaplacian) -> Result<DenseSym> {
    let n = lap.n();
    if n > DENSE_PINV_MAX_N {
        return Err(Error::Guard(format!("dense pseudoinverse needs n ≤ {DENSE_PINV_MAX_N}, got {n}")));
    }
    let h = lap.h();
    let m = lap.to_dense() + h * h.transpose();
    let lc = cholesky(&m, 1e-14)?;
    let mut inv = DMatrix::identity(n, n);
    solve_lower_in_place(&lc, &mut inv);
    let k = inv.transpose() * inv - h * h.transpose();
    DenseSym::symmetrize(k)
}

/// Trace of L⁺ from the dense pseudoinverse.
pub fn trace_pinv(lap: &RescaledLaplacian) -> Result<f64> {
    Ok(dense_pinv(lap)?.trace())
}

/// `L_L^h(I) = Tr[(K²)_{I,I} K_{I,I}⁻¹] − (1 + qᵀ (K²)_{I,I} q) / (h_Iᵀ q)`
/// with `q = K_{I,I}⁻¹ h_I`.
pub fn laplacian_objective_eval(k: &DenseSym, h: &DVector<f64>, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::Invalid("the Laplacian objective needs a nonempty index set".into()));
    }
    let n = k.n();
    if h.len() != n {
        return Err(Error::Dim(format!("h has length {} but K is {n}x{n}", h.len())));
    }
    let t = idx.len();
    let kii = k.principal(idx);
    let lc = cholesky(&kii, 1e-12).map_err(|e| match e {
        Error::SingularPivot { step, pivot, .. } => Error::SingularPivot {
            step,
            index: idx[step],
            pivot,
        },
        other => other,
    })?;
    // A = K_{:,I}; Tr[AᵀA K_II⁻¹] = ‖Lc⁻¹ Aᵀ‖_F².
    let a = DMatrix::from_fn(n, t, |i, c| k.get(i, idx[c]));
    let mut at = a.transpose();
    solve_lower_in_place(&lc, &mut at);
    let first = at.norm_squared();
    let mut q = DMatrix::from_fn(t, 1, |r, _| h[idx[r]]);
    let hi = q.clone();
    solve_lower_in_place(&lc, &mut q);
    crate::linops::solve_lower_t_in_place(&lc, &mut q);
    let tau = hi.dot(&q);
    let aq = &a * &q;
    Ok(first - (1.0 + aq.norm_squared()) / tau)
}

/// `Tr[(L_{Ī,Ī})⁻¹]` where Ī is the complement of `idx` (0 if Ī is empty).
pub fn complement_trace(l: &DMatrix<f64>, idx: &[usize]) -> Result<f64> {
    let n = l.nrows();
    let mut keep = vec![true; n];
    for &i in idx {
        keep[i] = false;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    if rest.is_empty() {
        return Ok(0.0);
    }
    let sub = DMatrix::from_fn(rest.len(), rest.len(), |r, c| l[(rest[r], rest[c])]);
    let lc = cholesky(&sub, 1e-14)?;
    let mut inv = DMatrix::identity(rest.len(), rest.len());
    solve_lower_in_place(&lc, &mut inv);
    Ok(inv.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> RescaledLaplacian {
        let r = SparseMat::from_triplets(2, 2, &[(0, 0, -1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, -1.0)]).unwrap();
        RescaledLaplacian::from_rate_matrix(&r, &DVector::from_vec(vec![0.5, 0.5])).unwrap()
    }

    #[test]
    fn two_state_chain() {
        let lap = two_state();
        let l = lap.to_dense();
        assert!((l[(0, 0)] - 1.0).abs() < 1e-15 && (l[(0, 1)] + 1.0).abs() < 1e-15);
        assert!((lap.h()[0] - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn broken_balance_rejected() {
        let r = SparseMat::from_triplets(2, 2, &[(0, 0, -1.0), (0, 1, 1.0), (1, 0, 2.0), (1, 1, -2.0)]).unwrap();
        assert!(RescaledLaplacian::from_rate_matrix(&r, &DVector::from_vec(vec![0.5, 0.5])).is_err());
    }

    #[test]
    fn disconnected_rejected() {
        let l = SparseMat::from_triplets(
            3,
            3,
            &[(0, 0, 1.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 1.0)],
        )
        .unwrap();
        let h = DVector::from_element(3, 1.0 / 3f64.sqrt());
        assert!(RescaledLaplacian::new(l, h).is_err());
    }

    #[test]
    fn two_state_pinv_and_objective() {
        let lap = two_state();
        let k = dense_pinv(&lap).unwrap();
        // L = [[1,-1],[-1,1]] has L⁺ = L/4.
        assert!((k.get(0, 0) - 0.25).abs() < 1e-14);
        let obj = laplacian_objective_eval(&k, lap.h(), &[0]).unwrap();
        assert!((obj + 0.25 / 0.5).abs() < 1e-14);
        // Complement of {0} is {1}: Tr[(L_11)⁻¹] = 1 = Tr K − obj.
        let ct = complement_trace(&lap.to_dense(), &[0]).unwrap();
        assert!((ct - (k.trace() - obj)).abs() < 1e-14);
    }
}
