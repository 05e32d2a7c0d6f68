//! Triangular preconditioners `L ≈ R Rᵀ`.
//!
//! R is lower triangular and invertible. On the complement of h the
//! factor satisfies `a·L ⪯ R Rᵀ ⪯ b·L`, so the preconditioned operator
//! `B = R⁻¹ L R⁻ᵀ` has its nonzero spectrum in `[1/b, 1/a]` and a single
//! null vector `Rᵀh / ‖Rᵀh‖`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::RescaledLaplacian;
use crate::error::{Error, Result};
use crate::io::{self, Symmetry};
use crate::linops::{cholesky, spectral_interval, LinearOperator, SparseMat};

/// Largest n accepted by the exact factorization.
pub const EXACT_PRECON_MAX_N: usize = 5000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PreconMode {
    /// Exact Cholesky factor; the preconditioned operator is a projector.
    Exact,
    /// No preconditioning (R = I).
    Identity,
    /// Factor read from a Matrix Market file with a bounds sidecar.
    External(PathBuf),
}

impl std::str::FromStr for PreconMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(PreconMode::Exact),
            "identity" | "none" => Ok(PreconMode::Identity),
            other => match other.strip_prefix("external:") {
                Some(p) => Ok(PreconMode::External(PathBuf::from(p))),
                None => Err(Error::Invalid(format!(
                    "unknown preconditioner {other} (exact, identity, external:<path>)"
                ))),
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct PreconFactor {
    r: Arc<SparseMat>,
    pub a: f64,
    pub b: f64,
}

impl PreconFactor {
    pub fn new(r: SparseMat, a: f64, b: f64) -> Result<Self> {
        let n = r.rows();
        if r.cols() != n {
            return Err(Error::NotSquare { rows: n, cols: r.cols() });
        }
        let r = if r.is_lower_triangular() {
            r
        } else {
            let t = r.transpose();
            if !t.is_lower_triangular() {
                return Err(Error::Invalid("preconditioner factor is not triangular".into()));
            }
            t
        };
        if let Some(i) = r.diag().iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Invalid(format!("factor diagonal at {i} is not positive")));
        }
        if !(a > 0.0) || !(b >= a) || !b.is_finite() {
            return Err(Error::Invalid(format!("bad spectral bounds a = {a}, b = {b}")));
        }
        Ok(Self { r: Arc::new(r), a, b })
    }

    pub fn r(&self) -> &SparseMat {
        &self.r
    }

    pub fn n(&self) -> usize {
        self.r.rows()
    }

    pub fn kappa(&self) -> f64 {
        self.b / self.a
    }

    /// Chebyshev interval `[1/b, 1/a]` of B on its image.
    pub fn interval(&self) -> (f64, f64) {
        (1.0 / self.b, 1.0 / self.a)
    }

    /// Sidecar path holding the bounds: `<factor>.bounds`.
    pub fn sidecar(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".bounds");
        PathBuf::from(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        io::write_sparse(path, &self.r, Symmetry::General, &["lower-triangular preconditioner factor".into()])?;
        fs::write(Self::sidecar(path), format!("a {:e}\nb {:e}\n", self.a, self.b))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let r = io::read_sparse(path)?;
        let side = Self::sidecar(path);
        let text = fs::read_to_string(&side)?;
        let (mut a, mut b) = (None, None);
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('%') {
                continue;
            }
            let mut it = line.split_whitespace();
            let key = it.next().unwrap_or("");
            let val: f64 = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse { line: ln + 1, msg: format!("bad bounds line '{line}'") })?;
            match key {
                "a" => a = Some(val),
                "b" => b = Some(val),
                other => return Err(Error::Parse { line: ln + 1, msg: format!("unknown key {other}") }),
            }
        }
        match (a, b) {
            (Some(a), Some(b)) => Self::new(r, a, b),
            _ => Err(Error::Parse { line: 0, msg: format!("{} must define a and b", side.display()) }),
        }
    }

    /// `B = R⁻¹ L R⁻ᵀ` together with its null vector.
    pub fn b_operator(&self, lap: &RescaledLaplacian) -> Result<BOperator> {
        if lap.n() != self.n() {
            return Err(Error::Dim(format!(
                "preconditioner is {} but the Laplacian is {}",
                self.n(),
                lap.n()
            )));
        }
        let mut v = vec![0.0; self.n()];
        self.r.mul_t_vec(lap.h().as_slice(), &mut v);
        let mut v = DVector::from_vec(v);
        let nrm = v.norm();
        v /= nrm;
        Ok(BOperator {
            l: lap.l_arc(),
            r: self.r.clone(),
            null: v,
        })
    }

    /// `M⁻¹ x = R⁻ᵀ R⁻¹ x`.
    pub fn apply_inverse(&self, x: &mut DVector<f64>) {
        // Diagonal positivity is checked at construction.
        self.r.solve_lower(x.as_mut_slice()).expect("validated factor");
        self.r.solve_lower_t(x.as_mut_slice()).expect("validated factor");
    }

    /// `R⁻ᵀ X`, column-wise.
    pub fn solve_t_block(&self, x: &mut DMatrix<f64>) {
        self.r.solve_lower_t_block(x).expect("validated factor");
    }
}

/// The preconditioned Laplacian `R⁻¹ L R⁻ᵀ`.
#[derive(Clone, Debug)]
pub struct BOperator {
    l: Arc<SparseMat>,
    r: Arc<SparseMat>,
    null: DVector<f64>,
}

impl BOperator {
    pub fn null_vector(&self) -> &DVector<f64> {
        &self.null
    }
}

impl LinearOperator for BOperator {
    fn out_dim(&self) -> usize {
        self.l.rows()
    }
    fn in_dim(&self) -> usize {
        self.l.rows()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = x.clone();
        self.r.solve_lower_t(y.as_mut_slice()).expect("validated factor");
        let mut z = DVector::zeros(y.len());
        self.l.mul_vec(y.as_slice(), z.as_mut_slice());
        self.r.solve_lower(z.as_mut_slice()).expect("validated factor");
        z
    }
    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x.clone();
        self.r.solve_lower_t_block(&mut y).expect("validated factor");
        let mut z = self.l.mul_block(&y, crate::linops::DEFAULT_BLOCK_WIDTH);
        self.r.solve_lower_block(&mut z).expect("validated factor");
        z
    }
}

/// Build the preconditioner for `mode`.
///
/// Exact mode factors `L + c·e_n e_nᵀ` with `c = L_nn`: the rank-one shift
/// makes the matrix definite without changing L on the complement of h, so
/// `B = I − v vᵀ` and `a = b = 1`.
pub fn default_precon(lap: &RescaledLaplacian, mode: &PreconMode) -> Result<PreconFactor> {
    let n = lap.n();
    match mode {
        PreconMode::Exact => {
            if n > EXACT_PRECON_MAX_N {
                return Err(Error::Guard(format!(
                    "exact preconditioner needs n ≤ {EXACT_PRECON_MAX_N}, got {n}"
                )));
            }
            let mut m = lap.to_dense();
            let shift = m[(n - 1, n - 1)].max(f64::MIN_POSITIVE);
            m[(n - 1, n - 1)] += shift;
            let r = cholesky(&m, 1e-14)?;
            PreconFactor::new(SparseMat::from_dense(&r, 0.0), 1.0, 1.0)
        }
        PreconMode::Identity => {
            let (lo, hi) = spectral_interval(lap.l(), Some(lap.h()))?;
            PreconFactor::new(SparseMat::identity(n), 1.0 / hi, 1.0 / lo)
        }
        PreconMode::External(path) => {
            let f = PreconFactor::load(path)?;
            if f.n() != n {
                return Err(Error::Dim(format!("external factor is {} but the Laplacian is {n}", f.n())));
            }
            Ok(f)
        }
    }
}
