//! Executable greedy-selection bounds, checked against recorded runs.
//!
//! Every bound is evaluated from its exact product form; the exponential
//! relaxation is carried alongside in `bound_exp`.

use std::fmt;

use crate::error::{Error, Result};
use crate::laplacian::{dense_pinv, laplacian_optimal_bruteforce, RescaledLaplacian};
use crate::select::SelectionResult;
use crate::sympoly::{dpp_expectation_clamped, partial_trace, Spectrum};

/// Relative slack used by `satisfied`.
pub const BOUND_SLACK: f64 = 1e-10;

/// Bound versus measurement at one prefix length.
#[derive(Clone, Debug, PartialEq)]
pub struct StepBound {
    pub k: usize,
    pub measured_gap: f64,
    pub bound_value: f64,
    pub bound_exp: f64,
    /// `Σ_{i<t} g_i + f_t g_t − R` (nonnegative when the LP inequality holds).
    pub lp_residual: Option<f64>,
    pub satisfied: bool,
}

/// Outcome of a bound check. The scalar fields describe the final prefix;
/// `steps` holds every prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub kind: String,
    pub k: usize,
    pub s: usize,
    /// Nominal relative score error.
    pub zeta: f64,
    pub f: Vec<f64>,
    pub r_ref: f64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub measured_gap: f64,
    pub bound_value: f64,
    pub bound_exp: f64,
    pub nu: Option<f64>,
    pub eta: Option<f64>,
    pub omega: Option<f64>,
    pub eps: Option<f64>,
    pub satisfied: bool,
    /// Every LP residual is nonnegative (up to slack).
    pub lp_satisfied: bool,
    pub steps: Vec<StepBound>,
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12e}")).unwrap_or_default()
}

impl BoundReport {
    pub const CSV_HEADER: &'static str =
        "kind,k,s,zeta,r_ref,alpha,beta,measured_gap,bound_value,bound_exp,nu,eta,omega,eps,satisfied,lp_satisfied,f";

    /// One flat CSV row matching [`CSV_HEADER`](Self::CSV_HEADER); `f` is
    /// `;`-separated.
    pub fn csv_row(&self) -> String {
        let f: Vec<String> = self.f.iter().map(|x| format!("{x}")).collect();
        format!(
            "{},{},{},{},{:.12e},{},{},{:.12e},{:.12e},{:.12e},{},{},{},{},{},{},{}",
            self.kind,
            self.k,
            self.s,
            self.zeta,
            self.r_ref,
            opt_str(self.alpha),
            opt_str(self.beta),
            self.measured_gap,
            self.bound_value,
            self.bound_exp,
            opt_str(self.nu),
            opt_str(self.eta),
            opt_str(self.omega),
            opt_str(self.eps),
            self.satisfied,
            self.lp_satisfied,
            f.join(";")
        )
    }

    /// Steps whose gap exceeds the bound.
    pub fn violations(&self) -> impl Iterator<Item = &StepBound> {
        self.steps.iter().filter(|s| !s.satisfied)
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, w: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(w, "{} (k = {}, s = {}, zeta = {} nominal)", self.kind, self.k, self.s, self.zeta)?;
        writeln!(w, "  reference     {:.10e}", self.r_ref)?;
        writeln!(w, "  measured gap  {:.10e}", self.measured_gap)?;
        writeln!(w, "  bound         {:.10e}  (exp form {:.10e})", self.bound_value, self.bound_exp)?;
        if let Some(a) = self.alpha {
            writeln!(w, "  alpha         {a}")?;
        }
        if let Some(b) = self.beta {
            writeln!(w, "  beta          {b}")?;
        }
        for (name, v) in [("nu", self.nu), ("eta", self.eta), ("omega", self.omega), ("eps", self.eps)] {
            if let Some(v) = v {
                writeln!(w, "  {name:<13} {v:.6e}")?;
            }
        }
        let bad = self.steps.iter().filter(|s| !s.satisfied).count();
        write!(
            w,
            "  {} ({} of {} prefixes violate; LP residuals {})",
            if self.satisfied { "SATISFIED" } else { "VIOLATED" },
            bad,
            self.steps.len(),
            if self.lp_satisfied { "ok" } else { "negative" }
        )
    }
}

fn check_f(f: &[f64]) -> Result<()> {
    match f.iter().find(|&&x| !(x > 1.0) || !x.is_finite()) {
        Some(x) => Err(Error::Invalid(format!("LP coefficient {x} must exceed 1"))),
        None => Ok(()),
    }
}

fn product_form(f: &[f64]) -> f64 {
    f.iter().map(|&x| (1.0 - 1.0 / x).max(0.0)).product()
}

fn exp_form(f: &[f64]) -> f64 {
    (-f.iter().map(|&x| 1.0 / x).sum::<f64>()).exp()
}

/// Bound on `1 − Σ y/R` under `R ≤ Σ_{i<t} y_i + f_t y_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LpBound {
    /// `∏(1 − 1/f_i)`, the LP optimum.
    pub product: f64,
    /// `exp(−Σ 1/f_i)`.
    pub exp: f64,
}

pub fn lp_bound_general(f: &[f64]) -> Result<LpBound> {
    check_f(f)?;
    Ok(LpBound {
        product: product_form(f),
        exp: exp_form(f),
    })
}

/// Bound when the next gain is at most α times the accumulated gain.
pub fn lp_bound_accumulated(f_next: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha = {alpha} outside (0, 1)")));
    }
    check_f(&[f_next])?;
    Ok(alpha * f_next / (1.0 + alpha * f_next))
}

/// Bound when the next gain is at most β times the first gain. `f` holds
/// `f_1..f_{k+1}`; `f_1` does not enter.
pub fn lp_bound_initial(f: &[f64], beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Invalid(format!("beta = {beta} outside (0, 1)")));
    }
    if f.len() < 2 {
        return Err(Error::Invalid("need f_1..f_{k+1} with k ≥ 1".into()));
    }
    check_f(f)?;
    let k = f.len() - 1;
    let inner: f64 = f[1..k].iter().map(|&x| 1.0 / (1.0 - 1.0 / x)).product();
    Ok(1.0 / (inner + 1.0 / (beta * f[k])))
}

/// First k (≥ 1) at which `g_{k+1} ≤ α Σ_{i≤k} g_i`.
pub fn accumulated_stop(gains: &[f64], alpha: f64) -> Option<usize> {
    let mut acc = 0.0;
    for (i, &g) in gains.iter().enumerate() {
        if i > 0 && g <= alpha * acc {
            return Some(i);
        }
        acc += g;
    }
    None
}

/// First k (≥ 1) at which `g_{k+1} ≤ β g_1`.
pub fn initial_stop(gains: &[f64], beta: f64) -> Option<usize> {
    let g1 = *gains.first()?;
    gains.iter().skip(1).position(|&g| g <= beta * g1).map(|p| p + 1)
}

/// Column-count estimates for an additive (r, ε) guarantee.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnEstimate {
    /// Greedy estimate, clamped below at r.
    pub columns: f64,
    /// DPP reference `r/ε + r − 1`.
    pub dpp_reference: f64,
}

/// `k* ≈ (1+ζ)(r/ε + r − 1)(ln ν⁻¹ + ln(ε⁻¹ − r⁻¹ + 1))`.
pub fn re_bound_columns(r: usize, eps: f64, nu: f64, zeta: f64) -> Result<ColumnEstimate> {
    if r == 0 || !(eps > 0.0) || !(nu > 0.0) || !(zeta >= 0.0) {
        return Err(Error::Invalid(format!("need r ≥ 1, eps > 0, nu > 0, zeta ≥ 0 (got {r}, {eps}, {nu}, {zeta})")));
    }
    let r = r as f64;
    let dpp = r / eps + r - 1.0;
    let v = (1.0 + zeta) * dpp * ((1.0 / nu).ln() + (1.0 / eps - 1.0 / r + 1.0).ln());
    Ok(ColumnEstimate {
        columns: v.max(r),
        dpp_reference: dpp,
    })
}

/// `k* ≈ (1+ζ)(rν/ω + r − 1) ln((r−1)/(rν) + 1/ω)` columns for relative
/// error ω against the top-r eigenvalue sum.
pub fn relative_bound_columns(r: usize, omega: f64, nu: f64, zeta: f64) -> Result<f64> {
    if r == 0 || !(omega > 0.0) || !(nu > 0.0) || !(zeta >= 0.0) {
        return Err(Error::Invalid(format!("need r ≥ 1, omega > 0, nu > 0, zeta ≥ 0 (got {r}, {omega}, {nu}, {zeta})")));
    }
    let r = r as f64;
    let v = (1.0 + zeta) * (r * nu / omega + r - 1.0) * ((r - 1.0) / (r * nu) + 1.0 / omega).ln();
    Ok(v.max(r))
}

/// `(ν, η)` for the top-r eigenvalues: `ν = (Tr − T_r)/T_r`, `η = 1 − T_r/Tr`.
pub fn spectral_ratios(lambda: &Spectrum, r: usize) -> (Option<f64>, Option<f64>) {
    let tr = lambda.trace();
    let tp = partial_trace(lambda, r);
    let nu = (tp > 0.0).then(|| (tr - tp) / tp);
    let eta = (tr > 0.0).then(|| 1.0 - tp / tr);
    (nu, eta)
}

fn relative_gap(r: f64, value: f64) -> f64 {
    if r > 0.0 {
        1.0 - value / r
    } else {
        0.0
    }
}

/// Greedy run against the s-DPP expectation: at each prefix k,
/// `1 − L(G_k)/D_s ≤ (1 − 1/((1+ζ)s))^k < e^{−k/((1+ζ)s)}`, plus the
/// per-step LP residuals `Σ_{i<t} g_i + (1+ζ)s g_t − D_s`.
///
/// When the spectrum has rank below s, `D_s` is replaced by its limit `Tr`.
pub fn dpp_discrepancy_check(run: &SelectionResult, spectrum: &Spectrum, s: usize, zeta: f64) -> Result<BoundReport> {
    if s == 0 || s > spectrum.len() {
        return Err(Error::Invalid(format!("s = {s} outside 1..={}", spectrum.len())));
    }
    if !(zeta >= 0.0) {
        return Err(Error::Invalid(format!("zeta = {zeta} must be nonnegative")));
    }
    let ds = dpp_expectation_clamped(spectrum, s)?.value;
    let fbar = (1.0 + zeta) * s as f64;
    let slack = BOUND_SLACK * ds.abs();
    let mut steps = Vec::with_capacity(run.len());
    let mut acc = 0.0;
    for (t, (&g, &obj)) in run.gains.iter().zip(&run.objective).enumerate() {
        let k = t + 1;
        let gap = relative_gap(ds, obj);
        let bound = (1.0 - 1.0 / fbar).max(0.0).powi(k as i32);
        let resid = acc + fbar * g - ds;
        acc += g;
        steps.push(StepBound {
            k,
            measured_gap: gap,
            bound_value: bound,
            bound_exp: (-(k as f64) / fbar).exp(),
            lp_residual: Some(resid),
            // In absolute units: ds·gap ≤ ds·bound + slack.
            satisfied: gap * ds.abs() <= bound * ds.abs() + slack,
        });
    }
    let (nu, eta) = spectral_ratios(spectrum, s);
    let tr = spectrum.trace();
    let tp = partial_trace(spectrum, s);
    let last = run.objective.last().copied().unwrap_or(0.0);
    let omega = (tp > 0.0).then(|| 1.0 - last / tp);
    let eps = (tr - tp > 0.0).then(|| (tr - last) / (tr - tp) - 1.0);
    Ok(finish(
        "dpp_discrepancy",
        s,
        zeta,
        vec![fbar; run.len()],
        ds,
        steps,
        slack,
        (nu, eta, omega, eps),
    ))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    kind: &str,
    s: usize,
    zeta: f64,
    f: Vec<f64>,
    r_ref: f64,
    steps: Vec<StepBound>,
    slack: f64,
    ratios: (Option<f64>, Option<f64>, Option<f64>, Option<f64>),
) -> BoundReport {
    let last = steps.last();
    BoundReport {
        kind: kind.to_string(),
        k: steps.len(),
        s,
        zeta,
        f,
        r_ref,
        alpha: None,
        beta: None,
        measured_gap: last.map_or(relative_gap(r_ref, 0.0), |x| x.measured_gap),
        bound_value: last.map_or(1.0, |x| x.bound_value),
        bound_exp: last.map_or(1.0, |x| x.bound_exp),
        nu: ratios.0,
        eta: ratios.1,
        omega: ratios.2,
        eps: ratios.3,
        satisfied: steps.iter().all(|x| x.satisfied),
        lp_satisfied: steps.iter().all(|x| x.lp_residual.is_none_or(|r| r >= -slack)),
        steps,
    }
}

/// Lower bounds on the greedy objective after `k = 1..=k_max` columns,
/// `max_{s ≤ k} D_s·(1 − (1 − 1/((1+ζ)s))^k)`.
pub fn dpp_lower_bounds(spectrum: &Spectrum, k_max: usize, zeta: f64) -> Result<Vec<f64>> {
    if !(zeta >= 0.0) {
        return Err(Error::Invalid(format!("zeta = {zeta} must be nonnegative")));
    }
    let s_top = k_max.min(spectrum.len());
    let ds = (1..=s_top)
        .map(|s| Ok(dpp_expectation_clamped(spectrum, s)?.value))
        .collect::<Result<Vec<f64>>>()?;
    Ok((1..=k_max)
        .map(|k| {
            (1..=k.min(s_top))
                .map(|s| {
                    let fbar = (1.0 + zeta) * s as f64;
                    ds[s - 1] * (1.0 - (1.0 - 1.0 / fbar).max(0.0).powi(k as i32))
                })
                .fold(0.0, f64::max)
        })
        .collect())
}

/// Post-hoc stopping checks on a kernel run: finds the first prefix k whose
/// next gain meets the α (accumulated) or β (initial) condition and bounds
/// `1 − L(G_k)/D_s` there. Returns `None` if the condition never fires.
pub fn stopping_check(
    run: &SelectionResult,
    spectrum: &Spectrum,
    s: usize,
    zeta: f64,
    alpha: Option<f64>,
    beta: Option<f64>,
) -> Result<Option<BoundReport>> {
    let base = dpp_discrepancy_check(run, spectrum, s, zeta)?;
    let fbar = (1.0 + zeta) * s as f64;
    let k = match (alpha, beta) {
        (Some(a), None) => accumulated_stop(&run.gains, a),
        (None, Some(b)) => initial_stop(&run.gains, b),
        _ => return Err(Error::Invalid("give exactly one of alpha and beta".into())),
    };
    let Some(k) = k else { return Ok(None) };
    // s = 1 with ζ = 0 puts f at its boundary value 1, where the closed forms
    // still hold as limits.
    let f = fbar.max(1.0 + f64::EPSILON);
    let bound = match (alpha, beta) {
        (Some(a), _) => lp_bound_accumulated(f, a)?,
        (_, Some(b)) => lp_bound_initial(&vec![f; k + 1], b)?,
        _ => unreachable!(),
    };
    let step = &base.steps[k - 1];
    let slack = BOUND_SLACK * base.r_ref.abs();
    let satisfied = step.measured_gap * base.r_ref.abs() <= bound * base.r_ref.abs() + slack;
    Ok(Some(BoundReport {
        kind: if alpha.is_some() { "stop_accumulated" } else { "stop_initial" }.to_string(),
        k,
        alpha,
        beta,
        measured_gap: step.measured_gap,
        bound_value: bound,
        bound_exp: bound,
        satisfied,
        f: vec![fbar; k + 1],
        steps: vec![StepBound {
            bound_value: bound,
            bound_exp: bound,
            satisfied,
            ..step.clone()
        }],
        ..base
    }))
}

/// Laplacian run against the optimal s-subset:
/// `L(O_s) − L(G_k) ≤ (2+ζ) Tr[L⁺] (1 − 1/((1+ζ)s))^{k−1} < (2+ζ) Tr[L⁺] e^{−(k−1)/((1+ζ)s)}`.
///
/// Without `opt_value` the optimum is found by enumeration. The slack is
/// taken relative to `max(|L(O_s)|, Tr[L⁺])` since the optimum can be near 0.
pub fn laplacian_bound_check(
    run: &SelectionResult,
    lap: &RescaledLaplacian,
    s: usize,
    zeta: f64,
    opt_value: Option<f64>,
) -> Result<BoundReport> {
    if s == 0 || s > lap.n() {
        return Err(Error::Invalid(format!("s = {s} outside 1..={}", lap.n())));
    }
    if !(zeta >= 0.0) {
        return Err(Error::Invalid(format!("zeta = {zeta} must be nonnegative")));
    }
    let k = dense_pinv(lap)?;
    let tr = k.trace();
    let opt = match opt_value {
        Some(v) => v,
        None => laplacian_optimal_bruteforce(&k, lap.h(), s)?.1,
    };
    let fbar = (1.0 + zeta) * s as f64;
    let scale = (2.0 + zeta) * tr;
    let slack = BOUND_SLACK * opt.abs().max(tr);
    let mut steps = Vec::with_capacity(run.len());
    let mut acc = 0.0;
    for (t, (&g, &obj)) in run.gains.iter().zip(&run.objective).enumerate() {
        let kk = t + 1;
        let gap = opt - obj;
        let bound = scale * (1.0 - 1.0 / fbar).max(0.0).powi(t as i32);
        // The LP starts at the second column.
        let resid = (t > 0).then(|| acc + fbar * g - opt);
        acc += g;
        steps.push(StepBound {
            k: kk,
            measured_gap: gap,
            bound_value: bound,
            bound_exp: scale * (-(t as f64) / fbar).exp(),
            lp_residual: resid,
            satisfied: gap <= bound + slack,
        });
    }
    Ok(finish(
        "laplacian_trace",
        s,
        zeta,
        vec![fbar; run.len().saturating_sub(1)],
        opt,
        steps,
        slack,
        (None, None, None, None),
    ))
}
