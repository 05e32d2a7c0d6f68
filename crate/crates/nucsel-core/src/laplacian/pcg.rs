//! Pseudoinverse matvecs by preconditioned conjugate gradients.

use nalgebra::{DMatrix, DVector};

use super::{PreconFactor, RescaledLaplacian};
use crate::error::{Error, Result};

pub const DEFAULT_PCG_TOL: f64 = 1e-10;

/// `⌈10·√κ·ln(1/tol)⌉`, at least 10.
pub fn pcg_iteration_cap(kappa: f64, tol: f64) -> usize {
    let v = 10.0 * kappa.max(1.0).sqrt() * (1.0 / tol).ln().max(1.0);
    (v.ceil() as usize).max(10)
}

/// `L⁺ x` by PCG with `M⁻¹ = R⁻ᵀR⁻¹`. The h component is removed from the
/// right-hand side, from every search direction and from the result.
pub fn pinv_matvec(
    lap: &RescaledLaplacian,
    precon: &PreconFactor,
    x: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>> {
    let n = lap.n();
    if x.len() != n || precon.n() != n {
        return Err(Error::Dim(format!(
            "pinv_matvec: L is {n}, x is {}, factor is {}",
            x.len(),
            precon.n()
        )));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::Invalid(format!("PCG tolerance {tol} outside (0, 1)")));
    }
    let l = lap.l();
    let mut r = x.clone();
    lap.project(&mut r);
    let bn = r.norm();
    let mut sol = DVector::zeros(n);
    if bn == 0.0 {
        return Ok(sol);
    }
    let cap = pcg_iteration_cap(precon.kappa(), tol);
    let mut z = r.clone();
    precon.apply_inverse(&mut z);
    lap.project(&mut z);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut q = DVector::zeros(n);
    let mut res = 1.0;
    for _ in 0..cap {
        l.mul_vec(p.as_slice(), q.as_mut_slice());
        let pq = p.dot(&q);
        if !(pq > 0.0) {
            return Err(Error::Breakdown(format!("PCG curvature {pq:e} is not positive")));
        }
        let alpha = rz / pq;
        sol.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &q, 1.0);
        lap.project(&mut r);
        res = r.norm() / bn;
        if res <= tol {
            lap.project(&mut sol);
            return Ok(sol);
        }
        z.copy_from(&r);
        precon.apply_inverse(&mut z);
        lap.project(&mut z);
        let rz_new = r.dot(&z);
        p = &z + &p * (rz_new / rz);
        rz = rz_new;
    }
    lap.project(&mut sol);
    Err(Error::NoConvergence {
        iters: cap,
        residual: res,
        best: sol.as_slice().to_vec(),
    })
}

/// `L⁺ X`, column by column.
pub fn pinv_block(
    lap: &RescaledLaplacian,
    precon: &PreconFactor,
    x: &DMatrix<f64>,
    tol: f64,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for c in 0..x.ncols() {
        let y = pinv_matvec(lap, precon, &x.column(c).into_owned(), tol)?;
        out.set_column(c, &y);
    }
    Ok(out)
}
