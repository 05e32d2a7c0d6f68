//! Chebyshev interpolation of `x ↦ x^{-1/2}` for pseudoinverse square roots.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linops::LinearOperator;

/// Interpolation error bound `4·M·ρ^{-n}/(ρ−1)` for `n` nodes on a spectrum
/// with condition number κ (interval scaled to `[1, κ]`). Returns ∞ where
/// the Bernstein ellipse parameter is not admissible.
pub fn cheb_bound(n: usize, kappa: f64) -> f64 {
    if kappa <= 1.0 {
        return 0.0;
    }
    if n == 0 {
        return f64::INFINITY;
    }
    let sk = kappa.sqrt();
    let rho = (1.0 - 1.0 / (2.0 * n as f64)) * (sk + 1.0) / (sk - 1.0);
    if !(rho > 1.0) {
        return f64::INFINITY;
    }
    let den = (rho + 1.0).powi(2) - kappa * (rho - 1.0).powi(2);
    if !(den > 0.0) {
        return f64::INFINITY;
    }
    let m = 2.0 * (rho / den).sqrt();
    let v = 4.0 * m * rho.powf(-(n as f64)) / (rho - 1.0);
    if v.is_finite() && v >= 0.0 {
        v
    } else {
        f64::INFINITY
    }
}

/// Smallest interpolation degree whose error bound is at most `eps`.
///
/// The asymptotic estimate `½√κ·ln(κ√n/ε)` brackets the search, which is
/// then refined by bisection on [`cheb_bound`].
pub fn cheb_degree(kappa: f64, eps: f64, n: usize) -> usize {
    if !(kappa > 1.0 + 1e-12) {
        return 0;
    }
    let eps = eps.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    let ok = |d: usize| cheb_bound(d, kappa) <= eps;
    let est = 0.5 * kappa.sqrt() * (kappa * (n.max(1) as f64).sqrt() / eps).ln();
    let mut hi = (est.ceil() as usize).max(1);
    while !ok(hi) {
        hi *= 2;
    }
    let mut lo = 0;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Chebyshev coefficients of `f(x) = ((a+b+(b−a)x)/2)^{-1/2}` interpolated
/// at the `degree+1` extrema points `cos(jπ/degree)`.
pub fn cheb_coefficients(a: f64, b: f64, degree: usize) -> Vec<f64> {
    let f = |x: f64| (0.5 * (a + b + (b - a) * x)).powf(-0.5);
    if degree == 0 {
        return vec![f(0.0)];
    }
    let nd = degree as f64;
    let pi = std::f64::consts::PI;
    let vals: Vec<f64> = (0..=degree).map(|j| f((j as f64 * pi / nd).cos())).collect();
    (0..=degree)
        .map(|k| {
            let mut s = 0.0;
            for (j, &v) in vals.iter().enumerate() {
                let w = if j == 0 || j == degree { 0.5 } else { 1.0 };
                s += w * v * ((j * k) as f64 * pi / nd).cos();
            }
            let c = 2.0 / nd * s;
            if k == 0 || k == degree {
                0.5 * c
            } else {
                c
            }
        })
        .collect()
}

fn deflate_cols(x: &mut DMatrix<f64>, null: Option<&DVector<f64>>) {
    if let Some(v) = null {
        let vv = v.norm_squared();
        for mut col in x.column_iter_mut() {
            let c = v.dot(&col) / vv;
            col.axpy(-c, v, 1.0);
        }
    }
}

/// `f_n(B) X`, approximating `B^{+/2} X` for SPSD B whose nonzero spectrum
/// lies in `[a, b]`. `null` (if given) is projected out at every step.
pub fn cheb_inv_sqrt_block(
    op: &dyn LinearOperator,
    a: f64,
    b: f64,
    x: &DMatrix<f64>,
    degree: usize,
    null: Option<&DVector<f64>>,
) -> Result<DMatrix<f64>> {
    if !(a > 0.0) || !(b >= a) || !b.is_finite() {
        return Err(Error::Invalid(format!("Chebyshev interval [{a}, {b}] is not positive")));
    }
    if x.nrows() != op.in_dim() {
        return Err(Error::Dim(format!("block has {} rows, operator {}", x.nrows(), op.in_dim())));
    }
    let mut t0 = x.clone();
    deflate_cols(&mut t0, null);
    if degree == 0 || b - a <= 1e-12 * b {
        return Ok(t0 * (0.5 * (a + b)).powf(-0.5));
    }
    let c = cheb_coefficients(a, b, degree);
    let (s, sh) = (2.0 / (b - a), (a + b) / (b - a));
    let xmap = |v: &DMatrix<f64>| -> DMatrix<f64> {
        let mut y = op.apply_block(v) * s - v * sh;
        deflate_cols(&mut y, null);
        y
    };
    let mut t1 = xmap(&t0);
    let mut acc = &t0 * c[0] + &t1 * c[1];
    for ck in &c[2..] {
        let t2 = xmap(&t1) * 2.0 - &t0;
        acc += &t2 * *ck;
        t0 = t1;
        t1 = t2;
    }
    deflate_cols(&mut acc, null);
    Ok(acc)
}

/// Single-vector form of [`cheb_inv_sqrt_block`].
pub fn cheb_inv_sqrt_matvec(
    op: &dyn LinearOperator,
    a: f64,
    b: f64,
    v: &DVector<f64>,
    degree: usize,
    null: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let x = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    Ok(cheb_inv_sqrt_block(op, a, b, &x, degree, null)?.column(0).into_owned())
}
