//! Elementary symmetric polynomials and the s-DPP expectation
//! `D_s(K) = e₁(λ) − (s+1)·e_{s+1}(λ)/e_s(λ)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linops::{cholesky, DenseSym};

/// Eigenvalues sorted in descending order.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
}

impl Spectrum {
    /// Sorts the input descending.
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| b.total_cmp(a));
        Self { values }
    }

    pub fn of(k: &DenseSym) -> Self {
        Self::new(k.eigenvalues())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn trace(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Clamp values in [−tol·max, 0) to zero; error on anything more negative.
    pub fn clamp_psd(&self, tol: f64) -> Result<Self> {
        let top = self.values.first().copied().unwrap_or(0.0).abs();
        let mut out = self.values.clone();
        for v in &mut out {
            if *v < 0.0 {
                if *v < -tol * top {
                    return Err(Error::Invalid(format!("spectrum has negative value {v:e}")));
                }
                *v = 0.0;
            }
        }
        Ok(Self { values: out })
    }
}

/// How elementary symmetric polynomials are accumulated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SymPolyMode {
    /// Linear arithmetic on x/max(x), rescaled afterwards.
    #[default]
    Scaled,
    /// log e_k via log-sum-exp. Requires x ≥ 0.
    Log,
}

/// `[e₀, …, e_{k_max}]` via the one-row recurrence `e_k ← e_k + x_i e_{k−1}`.
/// Entries with index above `len(x)` are zero.
pub fn elem_sym(x: &[f64], k_max: usize) -> Vec<f64> {
    let mut e = vec![0.0; k_max + 1];
    e[0] = 1.0;
    for (i, &xi) in x.iter().enumerate() {
        for k in (1..=k_max.min(i + 1)).rev() {
            e[k] += xi * e[k - 1];
        }
    }
    e
}

/// `log e_k` for nonnegative x (−∞ where e_k = 0).
pub fn log_elem_sym(x: &[f64], k_max: usize) -> Vec<f64> {
    let mut le = vec![f64::NEG_INFINITY; k_max + 1];
    le[0] = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        if xi <= 0.0 {
            continue;
        }
        let lx = xi.ln();
        for k in (1..=k_max.min(i + 1)).rev() {
            le[k] = logaddexp(le[k], lx + le[k - 1]);
        }
    }
    le
}

fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Value of `D_s` together with a flag raised when fewer than s eigenvalues
/// are nonzero, in which case the value is the limit `Tr`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DppValue {
    pub value: f64,
    pub degenerate: bool,
}

/// `D_s(Diag(λ))`. Errors if `e_s(λ) = 0` for s ≥ 1.
pub fn dpp_expectation(lambda: &Spectrum, s: usize) -> Result<f64> {
    dpp_expectation_mode(lambda, s, SymPolyMode::Scaled)
}

pub fn dpp_expectation_mode(lambda: &Spectrum, s: usize, mode: SymPolyMode) -> Result<f64> {
    let n = lambda.len();
    if s > n {
        return Err(Error::Invalid(format!("s = {s} exceeds dimension {n}")));
    }
    if s == 0 {
        return Ok(0.0);
    }
    let lam = lambda.clamp_psd(1e-10)?;
    let x = lam.values();
    let top = x.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(Error::RankDeficient(format!("e_{s} vanishes: spectrum is zero")));
    }
    if x.iter().filter(|&&v| v > 0.0).count() < s {
        return Err(Error::RankDeficient(format!(
            "e_{s} vanishes: fewer than {s} nonzero eigenvalues"
        )));
    }
    let trace: f64 = x.iter().sum();
    let ratio = match mode {
        SymPolyMode::Scaled => {
            let scaled: Vec<f64> = x.iter().map(|v| v / top).collect();
            let e = elem_sym(&scaled, s + 1);
            let r = e[s + 1] / e[s];
            if r.is_finite() && e[s].is_finite() && e[s] > 0.0 {
                r * top
            } else {
                // Overflow or underflow of the scaled polynomials.
                return dpp_expectation_mode(lambda, s, SymPolyMode::Log);
            }
        }
        SymPolyMode::Log => {
            let le = log_elem_sym(x, s + 1);
            if le[s] == f64::NEG_INFINITY {
                return Err(Error::RankDeficient(format!(
                    "e_{s} vanishes: fewer than {s} nonzero eigenvalues"
                )));
            }
            (le[s + 1] - le[s]).exp()
        }
    };
    Ok(trace - (s as f64 + 1.0) * ratio)
}

/// As [`dpp_expectation`], but reports `Tr` with `degenerate = true`
/// instead of failing when the spectrum has rank below s.
pub fn dpp_expectation_clamped(lambda: &Spectrum, s: usize) -> Result<DppValue> {
    match dpp_expectation(lambda, s) {
        Ok(value) => Ok(DppValue {
            value,
            degenerate: false,
        }),
        Err(Error::RankDeficient(_)) => Ok(DppValue {
            value: lambda.values().iter().map(|v| v.max(0.0)).sum(),
            degenerate: true,
        }),
        Err(e) => Err(e),
    }
}

/// Sum of the r largest eigenvalues.
pub fn partial_trace(lambda: &Spectrum, r: usize) -> f64 {
    lambda.values().iter().take(r).sum()
}

/// Largest n accepted by [`dpp_expectation_bruteforce`].
pub const BRUTEFORCE_MAX_N: usize = 14;

/// `D_s(K)` by enumerating every s-subset: the det-weighted mean of the
/// captured trace `Tr[K_{:,I} K_{I,I}⁻¹ K_{I,:}]`.
pub fn dpp_expectation_bruteforce(k: &DenseSym, s: usize) -> Result<f64> {
    let n = k.n();
    if n > BRUTEFORCE_MAX_N {
        return Err(Error::Guard(format!("n = {n} exceeds {BRUTEFORCE_MAX_N}")));
    }
    if s > n {
        return Err(Error::Invalid(format!("s = {s} exceeds dimension {n}")));
    }
    if s == 0 {
        return Ok(0.0);
    }
    let m = k.matrix();
    let mut num = 0.0;
    let mut den = 0.0;
    for_each_subset(n, s, |idx| {
        let sub = k.principal(idx);
        if let Ok(l) = cholesky(&sub, 1e-13) {
            let det: f64 = l.diagonal().iter().map(|v| v * v).product();
            // Captured trace ‖L⁻¹ K_{I,:}‖_F².
            let mut rows = DMatrix::from_fn(s, n, |a, c| m[(idx[a], c)]);
            l.solve_lower_triangular_mut(&mut rows);
            num += det * rows.norm_squared();
            den += det;
        }
    });
    if den <= 0.0 {
        return Err(Error::RankDeficient(format!("every {s}-subset is singular")));
    }
    Ok(num / den)
}

/// Call `f` on every increasing s-subset of 0..n in lexicographic order.
pub fn for_each_subset(n: usize, s: usize, mut f: impl FnMut(&[usize])) {
    if s > n {
        return;
    }
    let mut idx: Vec<usize> = (0..s).collect();
    loop {
        f(&idx);
        let mut i = s;
        while i > 0 && idx[i - 1] == n - s + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..s {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Binomial coefficient as f64.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elem_sym_examples() {
        assert_eq!(elem_sym(&[2.0], 1), vec![1.0, 2.0]);
        assert_eq!(elem_sym(&[1.0, 2.0, 3.0], 3), vec![1.0, 6.0, 11.0, 6.0]);
        assert_eq!(elem_sym(&[1.0; 4], 2)[2], 6.0);
        assert_eq!(elem_sym(&[], 2), vec![1.0, 0.0, 0.0]);
        assert_eq!(elem_sym(&[1.0, 1.0], 3)[3], 0.0);
    }

    #[test]
    fn dpp_endpoints() {
        let l = Spectrum::new(vec![3.0, 2.0, 1.0]);
        assert_eq!(dpp_expectation(&l, 0).unwrap(), 0.0);
        assert!((dpp_expectation(&l, 3).unwrap() - 6.0).abs() < 1e-14);
        assert!((dpp_expectation(&l, 1).unwrap() - 7.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn dpp_identity_spectrum() {
        let l = Spectrum::new(vec![1.0; 7]);
        for s in 0..=7 {
            assert!((dpp_expectation(&l, s).unwrap() - s as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficiency() {
        let l = Spectrum::new(vec![2.0, 1.0, 0.0, 0.0]);
        assert!(matches!(dpp_expectation(&l, 3), Err(Error::RankDeficient(_))));
        let v = dpp_expectation_clamped(&l, 3).unwrap();
        assert!(v.degenerate);
        assert_eq!(v.value, 3.0);
        assert!(!dpp_expectation_clamped(&l, 2).unwrap().degenerate);
    }

    #[test]
    fn log_mode_matches_scaled() {
        let l = Spectrum::new((1..=30).map(|i| 1.0 / i as f64).collect());
        for s in 1..30 {
            let a = dpp_expectation_mode(&l, s, SymPolyMode::Scaled).unwrap();
            let b = dpp_expectation_mode(&l, s, SymPolyMode::Log).unwrap();
            assert!((a - b).abs() < 1e-10 * a.abs(), "s={s}: {a} vs {b}");
        }
    }

    #[test]
    fn large_spectrum_does_not_overflow() {
        let l = Spectrum::new((0..3000).map(|i| 1.0 + (i % 7) as f64).collect());
        let v = dpp_expectation(&l, 1500).unwrap();
        assert!(v.is_finite() && v > 0.0 && v < l.trace());
    }

    #[test]
    fn partial_traces() {
        let l = Spectrum::new(vec![5.0, 3.0, 1.0]);
        assert_eq!(partial_trace(&l, 0), 0.0);
        assert_eq!(partial_trace(&l, 2), 8.0);
        assert_eq!(partial_trace(&l, 3), l.trace());
    }

    #[test]
    fn bruteforce_small() {
        assert!((dpp_expectation_bruteforce(&DenseSym::identity(4), 2).unwrap() - 2.0).abs() < 1e-12);
        let k = DenseSym::from_diag(&[3.0, 2.0, 1.0]);
        assert!((dpp_expectation_bruteforce(&k, 1).unwrap() - 7.0 / 3.0).abs() < 1e-12);
        assert!(dpp_expectation_bruteforce(&DenseSym::identity(15), 2).is_err());
    }

    #[test]
    fn subsets_enumerated() {
        let mut count = 0;
        for_each_subset(6, 3, |_| count += 1);
        assert_eq!(count as f64, binomial(6, 3));
    }
}
