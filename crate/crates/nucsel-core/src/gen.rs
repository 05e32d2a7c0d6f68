//! Reproducible test-problem generators.
//!
//! Every generator is a pure function of its parameters and seed. Squared
//! exponential kernels use `K_ij = exp(−‖x_i − x_j‖² / (2σ²))`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::laplacian::RescaledLaplacian;
use crate::linops::{mgs, DenseSym, SparseMat};
use crate::rng;

pub type Point = [f64; 2];

/// Eigenvalue profile for [`random_spsd`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decay {
    Flat,
    /// λ_i = q^i.
    Geometric(f64),
    /// λ_i = (i+1)^{-p}.
    Power(f64),
}

impl Decay {
    pub fn value(self, i: usize) -> f64 {
        match self {
            Decay::Flat => 1.0,
            Decay::Geometric(q) => q.powi(i as i32),
            Decay::Power(p) => ((i + 1) as f64).powf(-p),
        }
    }
}

impl std::str::FromStr for Decay {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("bad decay '{s}' (flat, geometric:<q>, power:<p>)"));
        if s == "flat" {
            return Ok(Decay::Flat);
        }
        let (kind, val) = s.split_once(':').ok_or_else(bad)?;
        let v: f64 = val.parse().map_err(|_| bad())?;
        match kind {
            "geometric" if v > 0.0 && v <= 1.0 => Ok(Decay::Geometric(v)),
            "power" if v >= 0.0 => Ok(Decay::Power(v)),
            _ => Err(bad()),
        }
    }
}

/// Named generator families with their parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    Adversarial { n: usize, n_c: usize, alpha: f64 },
    Star { n: usize, beta: f64 },
    Gaussian { n: usize, sigma: f64 },
    Spiral { n: usize, sigma: f64, rel_tol: f64 },
    Smiley { sigma: f64 },
    Reversible { n: usize, extra_edges: usize },
    RandomSpsd { n: usize, rank: usize, decay: Decay },
    SparseRandom { m: usize, n: usize, density: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenSpec {
    pub family: Family,
    pub seed: u64,
}

/// Output of [`generate`].
#[derive(Clone, Debug)]
pub enum Generated {
    /// Dense SPSD matrix, with an exact factor when one is known.
    Kernel { k: DenseSym, factor: Option<DMatrix<f64>> },
    /// SPSD matrix given only through a sparse factor, `K = C Cᵀ`.
    Factor(SparseMat),
    Laplacian(RescaledLaplacian),
    /// Rectangular sparse matrix (CUR input).
    Matrix(SparseMat),
}

pub fn generate(spec: &GenSpec) -> Result<Generated> {
    let seed = spec.seed;
    Ok(match spec.family {
        Family::Adversarial { n, n_c, alpha } => {
            let (k, a) = adversarial_kernel(n, n_c, alpha)?;
            Generated::Kernel { k, factor: Some(a) }
        }
        Family::Star { n, beta } => Generated::Laplacian(star_laplacian(n, beta)?),
        Family::Gaussian { n, sigma } => Generated::Kernel {
            k: sq_exp_kernel(&gaussian_points(n, seed), sigma)?,
            factor: None,
        },
        Family::Spiral { n, sigma, rel_tol } => {
            Generated::Factor(sq_exp_factor(&spiral_points(n), sigma, rel_tol, n, DEFAULT_DROP_TOL)?)
        }
        Family::Smiley { sigma } => Generated::Kernel {
            k: sq_exp_kernel(&smiley_points(), sigma)?,
            factor: None,
        },
        Family::Reversible { n, extra_edges } => {
            Generated::Laplacian(random_reversible_laplacian(n, extra_edges, seed)?)
        }
        Family::RandomSpsd { n, rank, decay } => Generated::Kernel {
            k: random_spsd(n, rank, decay, seed)?,
            factor: None,
        },
        Family::SparseRandom { m, n, density } => Generated::Matrix(random_sparse(m, n, density, seed)?),
    })
}

/// `n − n_c` isolated points with self-similarity α next to a clique of
/// `n_c` identical points, with the factor `A` (n × (n−n_c+1)).
pub fn adversarial_kernel(n: usize, n_c: usize, alpha: f64) -> Result<(DenseSym, DMatrix<f64>)> {
    if n_c == 0 || n_c > n {
        return Err(Error::Invalid(format!("need 1 ≤ n_c ≤ n, got n_c = {n_c}, n = {n}")));
    }
    if !(alpha > 1.0) {
        return Err(Error::Invalid(format!("alpha must exceed 1, got {alpha}")));
    }
    let nd = n - n_c;
    let mut a = DMatrix::zeros(n, nd + 1);
    for i in 0..nd {
        a[(i, i)] = alpha.sqrt();
    }
    for i in nd..n {
        a[(i, nd)] = 1.0;
    }
    let k = DenseSym::from_fn(n, |i, j| {
        if i < nd {
            if i == j {
                alpha
            } else {
                0.0
            }
        } else if j >= nd {
            1.0
        } else {
            0.0
        }
    });
    Ok((k, a))
}

/// Star graph on n nodes (center 0) rescaled by
/// `h = (β, 1, …, 1)/√(n−1+β²)`.
pub fn star_laplacian(n: usize, beta: f64) -> Result<RescaledLaplacian> {
    if n < 2 {
        return Err(Error::Invalid("a star needs at least two nodes".into()));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Invalid(format!("beta must lie in (0, 1], got {beta}")));
    }
    let nrm = ((n - 1) as f64 + beta * beta).sqrt();
    let mut h = DVector::from_element(n, 1.0 / nrm);
    h[0] = beta / nrm;
    let mut trips = vec![(0, 0, (n - 1) as f64 / (h[0] * h[0]))];
    for i in 1..n {
        let off = -1.0 / (h[0] * h[i]);
        trips.push((0, i, off));
        trips.push((i, 0, off));
        trips.push((i, i, 1.0 / (h[i] * h[i])));
    }
    RescaledLaplacian::new(SparseMat::from_triplets(n, n, &trips)?, h)
}

/// Unscaled star Laplacian `L̄` (dense), center 0.
pub fn star_graph_laplacian(n: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    l[(0, 0)] = (n - 1) as f64;
    for i in 1..n {
        l[(0, i)] = -1.0;
        l[(i, 0)] = -1.0;
        l[(i, i)] = 1.0;
    }
    l
}

fn sq_exp(p: &Point, q: &Point, inv2s2: f64) -> f64 {
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    (-(dx * dx + dy * dy) * inv2s2).exp()
}

pub fn sq_exp_kernel(points: &[Point], sigma: f64) -> Result<DenseSym> {
    if !(sigma > 0.0) {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    let c = 1.0 / (2.0 * sigma * sigma);
    Ok(DenseSym::from_fn(points.len(), |i, j| sq_exp(&points[i], &points[j], c)))
}

/// Entries of a generated factor at or below this magnitude are dropped.
pub const DEFAULT_DROP_TOL: f64 = 1e-14;

/// Sparse factor `C` (n × r) of the squared exponential kernel from
/// diagonal-pivoted Cholesky, stopped once the residual trace falls below
/// `rel_tol · n` or r reaches `max_rank`. Kernel columns are evaluated on
/// demand, so the dense kernel is never formed.
pub fn sq_exp_factor(points: &[Point], sigma: f64, rel_tol: f64, max_rank: usize, drop_tol: f64) -> Result<SparseMat> {
    if !(sigma > 0.0) {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    let n = points.len();
    let c = 1.0 / (2.0 * sigma * sigma);
    let mut d = vec![1.0; n];
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let target = rel_tol * n as f64;
    while cols.len() < max_rank.min(n) {
        let resid: f64 = d.iter().sum();
        if resid <= target {
            break;
        }
        let j = (0..n).fold(0, |b, i| if d[i] > d[b] { i } else { b });
        let dj = d[j];
        if !(dj > 0.0) {
            break;
        }
        let mut g: Vec<f64> = points.iter().map(|p| sq_exp(p, &points[j], c)).collect();
        for col in &cols {
            let f = col[j];
            if f != 0.0 {
                for (gi, ci) in g.iter_mut().zip(col) {
                    *gi -= f * ci;
                }
            }
        }
        let s = dj.sqrt();
        for gi in g.iter_mut() {
            *gi /= s;
        }
        for (di, gi) in d.iter_mut().zip(&g) {
            *di = (*di - gi * gi).max(0.0);
        }
        d[j] = 0.0;
        cols.push(g);
    }
    let r = cols.len();
    let mut trips = Vec::new();
    for (k, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > drop_tol {
                trips.push((i, k, v));
            }
        }
    }
    SparseMat::from_triplets(n, r, &trips)
}

/// n draws from N(0, I₂).
pub fn gaussian_points(n: usize, seed: u64) -> Vec<Point> {
    let mut r = rng::rng(seed);
    (0..n)
        .map(|_| [StandardNormal.sample(&mut r), StandardNormal.sample(&mut r)])
        .collect()
}

/// `(e^{t/5} cos t, e^{t/5} sin t)` for n evenly spaced t in [0, 64].
pub fn spiral_points(n: usize) -> Vec<Point> {
    (0..n)
        .map(|i| {
            let t = if n > 1 { 64.0 * i as f64 / (n - 1) as f64 } else { 0.0 };
            let r = (t / 5.0).exp();
            [r * t.cos(), r * t.sin()]
        })
        .collect()
}

pub const SMILEY_OUTLINE: usize = 7920;
pub const SMILEY_SMILE: usize = 1980;
pub const SMILEY_EYE: usize = 50;

/// Evenly spaced smiley face: an outline circle of radius 20, a smile arc
/// of radius 12 below the center and two eyes of radius 1.5.
pub fn smiley_points() -> Vec<Point> {
    use std::f64::consts::PI;
    let mut pts = Vec::with_capacity(SMILEY_OUTLINE + SMILEY_SMILE + 2 * SMILEY_EYE);
    let ring = |pts: &mut Vec<Point>, cx: f64, cy: f64, r: f64, m: usize| {
        for i in 0..m {
            let a = 2.0 * PI * i as f64 / m as f64;
            pts.push([cx + r * a.cos(), cy + r * a.sin()]);
        }
    };
    ring(&mut pts, 0.0, 0.0, 20.0, SMILEY_OUTLINE);
    let (a0, a1) = (200f64.to_radians(), 340f64.to_radians());
    for i in 0..SMILEY_SMILE {
        let a = a0 + (a1 - a0) * i as f64 / (SMILEY_SMILE - 1) as f64;
        pts.push([12.0 * a.cos(), 12.0 * a.sin()]);
    }
    ring(&mut pts, -7.0, 6.0, 1.5, SMILEY_EYE);
    ring(&mut pts, 7.0, 6.0, 1.5, SMILEY_EYE);
    pts
}

/// Random reversible chain: a spanning tree (node i joins a random node
/// above it) plus `extra_edges` random edges, conductances in [0.5, 2] and
/// Dirichlet(1) stationary distribution.
pub fn random_reversible_laplacian(n: usize, extra_edges: usize, seed: u64) -> Result<RescaledLaplacian> {
    let (rates, pi) = random_reversible_chain(n, extra_edges, seed)?;
    RescaledLaplacian::from_rate_matrix(&rates, &pi)
}

/// Rate matrix and stationary distribution behind
/// [`random_reversible_laplacian`].
pub fn random_reversible_chain(n: usize, extra_edges: usize, seed: u64) -> Result<(SparseMat, DVector<f64>)> {
    if n < 2 {
        return Err(Error::Invalid("a chain needs at least two states".into()));
    }
    let mut r = rng::rng(seed);
    let mut pi: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut r)).collect::<Vec<f64>>();
    let tot: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= tot);
    let mut edges = std::collections::BTreeMap::new();
    for i in 0..n - 1 {
        let p = r.random_range(i + 1..n);
        edges.insert((i, p), r.random_range(0.5..2.0));
    }
    let max_extra = n * (n - 1) / 2 - (n - 1);
    let want = extra_edges.min(max_extra);
    let mut added = 0;
    while added < want {
        let a = r.random_range(0..n);
        let b = r.random_range(0..n);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if let std::collections::btree_map::Entry::Vacant(e) = edges.entry(key) {
            e.insert(r.random_range(0.5..2.0));
            added += 1;
        }
    }
    let mut diag = vec![0.0; n];
    let mut trips = Vec::with_capacity(2 * edges.len() + n);
    for (&(i, j), &c) in &edges {
        let (rij, rji) = (c / pi[i], c / pi[j]);
        trips.push((i, j, rij));
        trips.push((j, i, rji));
        diag[i] -= rij;
        diag[j] -= rji;
    }
    for (i, d) in diag.into_iter().enumerate() {
        trips.push((i, i, d));
    }
    Ok((SparseMat::from_triplets(n, n, &trips)?, DVector::from_vec(pi)))
}

/// `U Λ Uᵀ` with Haar-like random orthonormal U (n × rank) and `Λ` from
/// `decay`.
pub fn random_spsd(n: usize, rank: usize, decay: Decay, seed: u64) -> Result<DenseSym> {
    if rank > n {
        return Err(Error::Invalid(format!("rank {rank} exceeds n = {n}")));
    }
    let mut r = rng::rng(seed);
    let mut u = rng::gaussian_matrix(&mut r, n, rank);
    if mgs(&mut u) < rank {
        return Err(Error::Degenerate("random basis lost rank".into()));
    }
    let mut ul = u.clone();
    for (c, mut col) in ul.column_iter_mut().enumerate() {
        col *= decay.value(c);
    }
    DenseSym::symmetrize(ul * u.transpose())
}

/// m × n sparse matrix with about `density·m·n` Gaussian entries, scaled
/// by heavy-tailed row and column weights so that a few rows and columns
/// dominate.
pub fn random_sparse(m: usize, n: usize, density: f64, seed: u64) -> Result<SparseMat> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Invalid(format!("density must lie in (0, 1], got {density}")));
    }
    let mut r = rng::rng(seed);
    let lognormal = |r: &mut rng::Rng| -> f64 {
        let z: f64 = StandardNormal.sample(r);
        (1.5 * z).exp()
    };
    let rw: Vec<f64> = (0..m).map(|_| lognormal(&mut r)).collect();
    let cw: Vec<f64> = (0..n).map(|_| lognormal(&mut r)).collect();
    let mut trips = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if r.random::<f64>() < density {
                let z: f64 = StandardNormal.sample(&mut r);
                trips.push((i, j, z * rw[i] * cw[j]));
            }
        }
    }
    SparseMat::from_triplets(m, n, &trips)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adversarial_small() {
        let (k, a) = adversarial_kernel(4, 2, 2.0).unwrap();
        let want = DMatrix::from_row_slice(
            4,
            4,
            &[2.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0],
        );
        assert_eq!(k.matrix(), &want);
        assert!((&a * a.transpose() - want).norm() < 1e-14);
    }

    #[test]
    fn star_null_vector() {
        let lap = star_laplacian(10, 0.9).unwrap();
        let mut lh = vec![0.0; 10];
        lap.l().mul_vec(lap.h().as_slice(), &mut lh);
        assert!(lh.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn spiral_starts_at_one() {
        let p = spiral_points(10_000);
        assert_eq!(p[0], [1.0, 0.0]);
    }

    #[test]
    fn smiley_count() {
        assert_eq!(smiley_points().len(), 10_000);
    }

    #[test]
    fn kernel_hand_values() {
        let k = sq_exp_kernel(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], 1.0).unwrap();
        assert!((k.get(0, 1) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k.get(0, 2) - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn factor_reproduces_kernel() {
        let pts = gaussian_points(60, 3);
        let k = sq_exp_kernel(&pts, 0.7).unwrap();
        let c = sq_exp_factor(&pts, 0.7, 1e-14, 60, 0.0).unwrap().to_dense();
        assert!((&c * c.transpose() - k.matrix()).amax() < 1e-10);
    }

    #[test]
    fn reversible_is_connected_and_reproducible() {
        let a = random_reversible_laplacian(30, 10, 9).unwrap();
        let b = random_reversible_laplacian(30, 10, 9).unwrap();
        assert_eq!(a.l(), b.l());
        assert_eq!(a.l().components(), 1);
    }

    #[test]
    fn flat_spectrum() {
        let k = random_spsd(6, 6, Decay::Flat, 1).unwrap();
        for v in k.eigenvalues() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}
