//! Independent dense oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use nucsel_core::linops::DenseSym;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

/// G Gᵀ with G of shape n × rank.
pub fn wishart(r: &mut ChaCha8Rng, n: usize, rank: usize) -> DMatrix<f64> {
    let g = gaussian(r, n, rank);
    let k = &g * g.transpose();
    (&k + k.transpose()) * 0.5
}

pub fn sym(m: DMatrix<f64>) -> DenseSym {
    DenseSym::new((&m + m.transpose()) * 0.5).unwrap()
}

pub fn sub(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn complement(n: usize, idx: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| !idx.contains(i)).collect()
}

pub fn inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("invertible")
}

/// Tr[K] − Tr[Schur complement of K_{I,I}].
pub fn schur_objective(k: &DMatrix<f64>, idx: &[usize]) -> f64 {
    let rest = complement(k.nrows(), idx);
    let kii = sub(k, idx, idx);
    let kri = sub(k, &rest, idx);
    let schur = sub(k, &rest, &rest) - &kri * inv(&kii) * kri.transpose();
    k.trace() - schur.trace()
}

/// K − K_{:,I} K_{I,I}⁻¹ K_{I,:}
pub fn residual(k: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    if idx.is_empty() {
        return k.clone();
    }
    let all: Vec<usize> = (0..k.nrows()).collect();
    let kai = sub(k, &all, idx);
    k - &kai * inv(&sub(k, idx, idx)) * kai.transpose()
}

/// Pseudoinverse through the full eigendecomposition.
pub fn pinv(m: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let e = m.clone().symmetric_eigen();
    let top = e.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let d = e.eigenvalues.map(|v| if v.abs() > rel * top { 1.0 / v } else { 0.0 });
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

pub fn eigs_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Laplacian objective from its definition, with K = L⁺.
pub fn laplacian_objective(k: &DMatrix<f64>, h: &DVector<f64>, idx: &[usize]) -> f64 {
    let all: Vec<usize> = (0..k.nrows()).collect();
    let kai = sub(k, &all, idx);
    let kinv = inv(&sub(k, idx, idx));
    let k2 = kai.transpose() * &kai;
    let hi = DVector::from_iterator(idx.len(), idx.iter().map(|&i| h[i]));
    let a = &kinv * &hi;
    let tau = hi.dot(&a);
    (&k2 * &kinv).trace() - (1.0 + a.dot(&(&k2 * &a))) / tau
}

/// Tr[(L_{Ī,Ī})⁻¹]
pub fn complement_inverse_trace(l: &DMatrix<f64>, idx: &[usize]) -> f64 {
    let rest = complement(l.nrows(), idx);
    inv(&sub(l, &rest, &rest)).trace()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Every s-subset of 0..n in lexicographic order.
pub fn subsets(n: usize, s: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, s: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == s {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, s, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, s, &mut Vec::new(), &mut out);
    out
}
