//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use nucsel_core::bounds::{accumulated_stop, dpp_lower_bounds, initial_stop, stopping_check};
use nucsel_core::cur::{cur_decompose, CurMode};
use nucsel_core::gen::{generate, Decay, Family, GenSpec, Generated};
use nucsel_core::io::{self, MmData, Symmetry};
use nucsel_core::laplacian::{
    default_precon, dense_pinv, select_laplacian_exact, select_laplacian_matrix_free, LaplacianOps, PreconMode,
    RescaledLaplacian,
};
use nucsel_core::linops::{sym_eig, DenseSym, FactoredOperator, GramOp, SparseMat};
use nucsel_core::select::{self, Method, SelectionResult};
use nucsel_core::sketch::{select_matrix_free, MatrixFreeOptions};
use nucsel_core::sympoly::{partial_trace, Spectrum};
use nucsel_core::verify::{self, SuiteSizes};

use crate::config::*;
use crate::output::*;

/// Largest factor rank whose Gram matrix is diagonalized for the
/// eigenvalue columns.
const SPECTRUM_MAX_RANK: usize = 4000;
/// Largest dense kernel diagonalized for the eigenvalue columns.
const SPECTRUM_MAX_N: usize = 6000;

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Command::Gen(a) => cmd_gen(&a),
        Command::KernelSelect(a) => cmd_kernel_select(&a),
        Command::Cur(a) => cmd_cur(&a),
        Command::LaplacianSelect(a) => cmd_laplacian(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn gen_family(a: &GenArgs, params: &mut BTreeMap<String, String>) -> CliResult<Family> {
    let mut put = |k: &str, v: String| {
        params.insert(k.to_string(), v);
    };
    put("family", format!("{:?}", a.family));
    let n = |d: usize| a.n.unwrap_or(d);
    let fam = match a.family {
        FamilyName::Adversarial => Family::Adversarial {
            n: n(2000),
            n_c: a.nc.unwrap_or(45),
            alpha: a.alpha.unwrap_or(1.00001),
        },
        FamilyName::Star => Family::Star {
            n: n(100),
            beta: a.beta.unwrap_or(0.9999),
        },
        FamilyName::Gaussian => Family::Gaussian {
            n: n(1000),
            sigma: a.sigma.unwrap_or(0.4),
        },
        FamilyName::Spiral => Family::Spiral {
            n: n(10_000),
            sigma: a.sigma.unwrap_or(1e3),
            rel_tol: a.rel_tol.unwrap_or(1e-10),
        },
        FamilyName::Smiley => Family::Smiley {
            sigma: a.sigma.unwrap_or(2.0),
        },
        FamilyName::Reversible => Family::Reversible {
            n: n(700),
            extra_edges: a.extra_edges.unwrap_or(70),
        },
        FamilyName::RandomSpsd => {
            let decay: Decay = a.decay.as_deref().unwrap_or("geometric:0.9").parse()?;
            Family::RandomSpsd {
                n: n(50),
                rank: a.rank.unwrap_or(n(50)),
                decay,
            }
        }
        FamilyName::SparseRandom => Family::SparseRandom {
            m: a.m.unwrap_or(200),
            n: n(200),
            density: a.density.unwrap_or(0.05),
        },
    };
    put("resolved", format!("{fam:?}"));
    Ok(fam)
}

fn cmd_gen(a: &GenArgs) -> CliResult<()> {
    let mut params = BTreeMap::new();
    let family = gen_family(a, &mut params)?;
    let cfg = RunConfig::for_gen(a, params);
    cfg.validate()?;
    let hdr = header_lines(&cfg);
    let out = &a.out;
    let mut written = vec![out.clone()];
    match generate(&GenSpec { family, seed: a.seed })? {
        Generated::Kernel { k, factor } => {
            io::write_dense(out, k.matrix(), &hdr)?;
            if let Some(f) = factor {
                let p = sibling(out, "factor");
                io::write_dense(&p, &f, &hdr)?;
                written.push(p);
            }
            let back = DenseSym::new(io::read_dense(out)?)
                .map_err(|e| CliError::Invariant(format!("reloaded kernel: {e}")))?;
            back.check_spsd(1e-10)
                .map_err(|e| CliError::Invariant(format!("reloaded kernel: {e}")))?;
        }
        Generated::Factor(c) => {
            io::write_sparse(out, &c, Symmetry::General, &hdr)?;
            let back = io::read_sparse(out)?;
            if back.rows() != c.rows() || back.nnz() != c.nnz() {
                return Err(CliError::Invariant("reloaded factor differs in shape".into()));
            }
        }
        Generated::Laplacian(lap) => {
            io::write_sparse(out, lap.l(), Symmetry::Symmetric, &hdr)?;
            let hp = sibling(out, "h");
            io::write_vector(&hp, lap.h(), &hdr)?;
            written.push(hp.clone());
            RescaledLaplacian::new(io::read_sparse(out)?, io::read_vector(&hp)?)
                .map_err(|e| CliError::Invariant(format!("reloaded Laplacian: {e}")))?;
        }
        Generated::Matrix(m) => {
            io::write_sparse(out, &m, Symmetry::General, &hdr)?;
            if io::read_sparse(out)?.nnz() != m.nnz() {
                return Err(CliError::Invariant("reloaded matrix differs".into()));
            }
        }
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

/// A kernel given densely or through a sparse factor.
enum KernelInput {
    Dense(DenseSym),
    Factor(Arc<SparseMat>),
}

impl KernelInput {
    fn load(path: &Path, factor: bool) -> CliResult<Self> {
        let as_factor = |s: SparseMat| KernelInput::Factor(Arc::new(s));
        Ok(match io::read_mm(path).map_err(at(path))? {
            MmData::Sparse(s) if factor || s.rows() != s.cols() => as_factor(s),
            MmData::Sparse(s) => KernelInput::Dense(DenseSym::new(s.to_dense())?),
            MmData::Dense(d) if factor || d.nrows() != d.ncols() => as_factor(SparseMat::from_dense(&d, 0.0)),
            MmData::Dense(d) => KernelInput::Dense(DenseSym::new(d)?),
        })
    }

    fn trace(&self) -> f64 {
        match self {
            KernelInput::Dense(k) => k.trace(),
            KernelInput::Factor(c) => c.frobenius_sq(),
        }
    }

    fn n(&self) -> usize {
        match self {
            KernelInput::Dense(k) => k.n(),
            KernelInput::Factor(c) => c.rows(),
        }
    }

    /// Matrix-free operators; a dense kernel is factored by its
    /// eigendecomposition.
    fn factored(&self) -> CliResult<FactoredOperator> {
        Ok(match self {
            KernelInput::Dense(k) => {
                let (vals, vecs) = sym_eig(k.matrix());
                let mut c = vecs;
                for (j, mut col) in c.column_iter_mut().enumerate() {
                    col *= vals[j].max(0.0).sqrt();
                }
                FactoredOperator::from_dense(k.clone(), c)?
            }
            KernelInput::Factor(c) => FactoredOperator::from_sparse_factor((**c).clone()),
        })
    }

    fn spectrum(&self) -> CliResult<Option<Spectrum>> {
        Ok(match self {
            KernelInput::Dense(k) if k.n() <= SPECTRUM_MAX_N => Some(Spectrum::of(k)),
            KernelInput::Factor(c) if c.cols() <= SPECTRUM_MAX_RANK => {
                let r = c.cols();
                let mut g = DMatrix::zeros(r, r);
                for i in 0..c.rows() {
                    let row: Vec<(usize, f64)> = c.row(i).collect();
                    for &(a, va) in &row {
                        for &(b, vb) in &row {
                            g[(a, b)] += va * vb;
                        }
                    }
                }
                let mut vals = DenseSym::symmetrize(g)?.eigenvalues();
                vals.resize(vals.len().max(c.rows()), 0.0);
                Some(Spectrum::new(vals))
            }
            _ => None,
        })
    }
}

/// Runs one selection; `mf` carries the matrix-free operators.
fn kernel_run(
    input: &KernelInput,
    mf: Option<&FactoredOperator>,
    method: Method,
    k: usize,
    z: usize,
    seed: u64,
) -> CliResult<SelectionResult> {
    Ok(match (mf, input) {
        (Some(ops), _) => {
            let opts = MatrixFreeOptions::new(z, seed).with_trace(input.trace());
            select_matrix_free(ops, method, k, opts)?
        }
        (None, KernelInput::Dense(kd)) => select::select(kd, method, k, seed)?,
        (None, KernelInput::Factor(c)) => select::select(&GramOp::new(c.clone()), method, k, seed)?,
    })
}

/// Prefix errors with the offending path.
fn at(path: &Path) -> impl Fn(nucsel_core::Error) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn check_k(k: usize, n: usize) -> CliResult<()> {
    if k > n {
        return Err(CliError::Usage(format!("--k {k} exceeds the dimension {n}")));
    }
    Ok(())
}

fn cmd_kernel_select(a: &KernelArgs) -> CliResult<()> {
    let cfg = RunConfig::for_kernel(a);
    cfg.validate()?;
    let input = KernelInput::load(&a.input, a.factor)?;
    check_k(a.sel.k, input.n())?;
    let ops = if a.sel.matrix_free { Some(input.factored()?) } else { None };
    let mut run = kernel_run(&input, ops.as_ref(), a.sel.method, a.sel.k, a.sel.z, a.sel.seed)?;
    let spectrum = input.spectrum()?;

    let mut trailer = Vec::new();
    let stop = match (a.alpha, a.beta) {
        (Some(al), _) => accumulated_stop(&run.gains, al),
        (_, Some(be)) => initial_stop(&run.gains, be),
        _ => None,
    };
    if let (Some(spec), true) = (&spectrum, a.alpha.is_some() || a.beta.is_some()) {
        if let Some(rep) = stopping_check(&run, spec, a.s.min(spec.len()).max(1), a.zeta, a.alpha, a.beta)? {
            trailer.extend(rep.to_string().lines().map(str::to_string));
        }
    }
    if let Some(ks) = stop {
        trailer.push(format!("stopping rule fired after {ks} columns"));
        run.indices.truncate(ks);
        run.gains.truncate(ks);
        run.objective.truncate(ks);
        run.residual_trace.truncate(ks);
    }
    if let Some(reason) = &run.early_stop {
        trailer.push(format!("early stop: {reason}"));
    }

    let steps = run.len();
    let eig: Vec<Option<f64>> = (1..=steps).map(|t| spectrum.as_ref().map(|s| partial_trace(s, t))).collect();
    let dpp: Vec<Option<f64>> = match &spectrum {
        Some(s) => dpp_lower_bounds(s, steps, a.zeta)?.into_iter().map(Some).collect(),
        None => vec![None; steps],
    };

    let mut wtr = csv_writer(a.sel.out.as_deref(), &cfg, &[format!("zeta {} (nominal)", a.zeta)])?;
    wtr.write_record(["step", "index", "gain", "objective", "residual_trace", "eig_bound", "dpp_bound"])?;
    let tr = run.trace;
    let tol = 1e-9 * tr.abs().max(1.0);
    let certified = a.sel.method == Method::Nuclear && !a.sel.matrix_free;
    let mut violations = Vec::new();
    let mut prev = 0.0;
    for t in 0..steps {
        let obj = run.objective[t];
        if obj < prev - tol {
            violations.push(format!("objective decreased at step {}", t + 1));
        }
        if eig[t].is_some_and(|e| obj > e + tol) {
            violations.push(format!("objective exceeds the eigenvalue bound at step {}", t + 1));
        }
        if certified && dpp[t].is_some_and(|d| obj < d - tol) {
            violations.push(format!("objective below the DPP bound at step {}", t + 1));
        }
        prev = obj;
        wtr.write_record([
            (t + 1).to_string(),
            run.indices[t].to_string(),
            fmt_opt(Some(run.gains[t])),
            fmt_opt(Some(obj)),
            fmt_opt(Some(run.residual_trace[t])),
            fmt_opt(eig[t]),
            fmt_opt(dpp[t]),
        ])?;
    }
    finish(wtr, &trailer)?;
    for l in &trailer {
        eprintln!("{l}");
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(violations.join("; ")))
    }
}

fn cmd_cur(a: &CurArgs) -> CliResult<()> {
    let cfg = RunConfig::for_cur(a);
    cfg.validate()?;
    let mat = io::read_sparse(&a.input).map_err(at(&a.input))?;
    let kc = a.k_cols.unwrap_or(a.sel.k);
    check_k(a.sel.k, mat.rows())?;
    check_k(kc, mat.cols())?;
    let mode = if a.sel.matrix_free {
        CurMode::MatrixFree { z: a.sel.z }
    } else {
        CurMode::Deterministic
    };
    let res = cur_decompose(&mat, a.sel.k, kc, a.sel.method, mode, a.sel.seed)?;
    let errs = res.prefix_errors_sq(&mat);
    let pick = |v: &[f64], t: usize, tr: f64| if v.is_empty() { tr } else { v[t.min(v.len() - 1)] };
    let norm = mat.frobenius_sq().sqrt();
    let mut wtr = csv_writer(a.sel.out.as_deref(), &cfg, &[])?;
    wtr.write_record([
        "step",
        "row_index",
        "col_index",
        "row_error",
        "col_error",
        "cur_error",
        "triangle_bound",
        "triangle_holds",
    ])?;
    let mut violations = Vec::new();
    for (t, e2) in errs.iter().enumerate() {
        let er = pick(&res.row_selection.residual_trace, t, res.row_selection.trace).max(0.0).sqrt();
        let ec = pick(&res.col_selection.residual_trace, t, res.col_selection.trace).max(0.0).sqrt();
        let e = e2.sqrt();
        let holds = e <= er + ec + 1e-8 * norm;
        if !holds {
            violations.push(format!("triangle bound fails at step {}", t + 1));
        }
        let idx = |v: &[usize]| v.get(t).map(|x| x.to_string()).unwrap_or_default();
        wtr.write_record([
            (t + 1).to_string(),
            idx(&res.row_indices),
            idx(&res.col_indices),
            fmt_opt(Some(er)),
            fmt_opt(Some(ec)),
            fmt_opt(Some(e)),
            fmt_opt(Some(er + ec)),
            holds.to_string(),
        ])?;
    }
    let direct = res.factored_error(&mat);
    let rel = (direct - res.frobenius_error).abs() / norm.max(f64::MIN_POSITIVE);
    if rel > 1e-8 {
        violations.push(format!(
            "closed-form error {} differs from recomputed {direct}",
            res.frobenius_error
        ));
    }
    finish(
        wtr,
        &[
            format!("frobenius_norm {norm:.17e}"),
            format!("closed_form_error {:.17e}", res.frobenius_error),
            format!("recomputed_error {direct:.17e}"),
        ],
    )?;
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(violations.join("; ")))
    }
}

fn h_path(input: &Path, h: &Option<PathBuf>) -> PathBuf {
    h.clone().unwrap_or_else(|| sibling(input, "h"))
}

fn load_laplacian(input: &Path, h: &Path) -> CliResult<RescaledLaplacian> {
    let l = io::read_sparse(input).map_err(at(input))?;
    Ok(RescaledLaplacian::new(l, io::read_vector(h).map_err(at(h))?)?)
}

/// Either the dense pseudoinverse or the matrix-free operators.
enum LapSolver {
    Exact(DenseSym),
    MatrixFree(Box<LaplacianOps>),
}

impl LapSolver {
    fn build(lap: RescaledLaplacian, knobs: &LaplacianKnobs, mf: bool) -> CliResult<(Self, Vec<String>)> {
        if !mf {
            return Ok((LapSolver::Exact(dense_pinv(&lap)?), Vec::new()));
        }
        let mode: PreconMode = knobs.precon.parse()?;
        let precon = default_precon(&lap, &mode)?;
        let ops = LaplacianOps::new(lap, precon, knobs.pcg_tol, knobs.cheb_eps)?;
        let info = vec![
            format!("preconditioned condition number {:.6e}", ops.precon.kappa()),
            format!("chebyshev degree {}", ops.cheb_degree),
        ];
        Ok((LapSolver::MatrixFree(Box::new(ops)), info))
    }

    fn run(&self, h: &nalgebra::DVector<f64>, method: Method, k: usize, z: usize, seed: u64) -> CliResult<SelectionResult> {
        Ok(match self {
            LapSolver::Exact(kd) => select_laplacian_exact(kd, h, method, k, seed)?,
            LapSolver::MatrixFree(ops) => select_laplacian_matrix_free(ops, method, k, MatrixFreeOptions::new(z, seed))?,
        })
    }
}

fn cmd_laplacian(a: &LaplacianArgs) -> CliResult<()> {
    let hp = h_path(&a.input, &a.knobs.h);
    let cfg = RunConfig::for_laplacian(a, &hp);
    cfg.validate()?;
    let lap = load_laplacian(&a.input, &hp)?;
    check_k(a.sel.k, lap.n() - 1)?;
    let h = lap.h().clone();
    let (solver, info) = LapSolver::build(lap, &a.knobs, a.sel.matrix_free)?;
    let run = solver.run(&h, a.sel.method, a.sel.k, a.sel.z, a.sel.seed)?;
    let mut wtr = csv_writer(a.sel.out.as_deref(), &cfg, &info)?;
    wtr.write_record(["step", "index", "gain", "objective", "complement_trace"])?;
    let tol = 1e-9 * run.trace.abs().max(1.0);
    let mut violations = Vec::new();
    for t in 0..run.len() {
        if t > 0 && run.gains[t] < -tol {
            violations.push(format!("negative gain at step {}", t + 1));
        }
        let comp = run.residual_trace[t];
        if comp.is_finite() && comp < -tol {
            violations.push(format!("negative complement trace at step {}", t + 1));
        }
        wtr.write_record([
            (t + 1).to_string(),
            run.indices[t].to_string(),
            fmt_opt(Some(run.gains[t])),
            fmt_opt(Some(run.objective[t])),
            fmt_opt(Some(comp)),
        ])?;
    }
    let trailer: Vec<String> = run.early_stop.iter().map(|r| format!("early stop: {r}")).collect();
    finish(wtr, &trailer)?;
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(violations.join("; ")))
    }
}

fn cmd_verify(a: &VerifyArgs) -> CliResult<()> {
    let cfg = RunConfig::for_verify(a);
    let sizes = if a.quick { SuiteSizes::QUICK } else { SuiteSizes::FULL };
    let outcomes = verify::run_all(sizes, a.seed)?;
    let mut wtr = csv_writer(a.out.as_deref(), &cfg, &[])?;
    wtr.write_record(["check", "instances", "violations", "worst", "seconds", "status"])?;
    for o in &outcomes {
        let status = if o.passed() { "pass" } else { "FAIL" };
        wtr.write_record([
            o.name.clone(),
            o.checks.to_string(),
            o.violations.to_string(),
            format!("{:.3e}", o.worst),
            format!("{:.3}", o.elapsed.as_secs_f64()),
            status.to_string(),
        ])?;
        if a.out.is_some() {
            println!("{:<24} {:>7} {:>4}  {status}", o.name, o.checks, o.violations);
        }
    }
    finish(wtr, &[])?;
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed()).map(|o| o.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(format!("failed checks: {}", failed.join(", "))))
    }
}

fn cmd_bench(a: &BenchArgs) -> CliResult<()> {
    let methods: Vec<Method> = if a.methods.is_empty() { Method::ALL.to_vec() } else { a.methods.clone() };
    let hp = (a.problem == Problem::Laplacian).then(|| h_path(&a.input, &a.knobs.h));
    let cfg = RunConfig::for_bench(a, &methods, hp.as_deref());
    cfg.validate()?;
    let jobs: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| (0..a.replicates).map(move |r| (m, r)))
        .collect();
    let seed_of = |r: usize| a.seed ^ r as u64;
    let (runs, info): (Vec<CliResult<SelectionResult>>, Vec<String>) = match a.problem {
        Problem::Kernel => {
            let input = KernelInput::load(&a.input, a.factor)?;
            check_k(a.k, input.n())?;
            let ops = if a.matrix_free { Some(input.factored()?) } else { None };
            let runs = jobs
                .par_iter()
                .map(|&(m, r)| kernel_run(&input, ops.as_ref(), m, a.k, a.z, seed_of(r)))
                .collect();
            (runs, vec![format!("trace {:.17e}", input.trace())])
        }
        Problem::Laplacian => {
            let hp = hp.as_deref().unwrap_or(Path::new(""));
            let lap = load_laplacian(&a.input, hp)?;
            check_k(a.k, lap.n() - 1)?;
            let h = lap.h().clone();
            let (solver, mut info) = LapSolver::build(lap, &a.knobs, a.matrix_free)?;
            if let LapSolver::Exact(kd) = &solver {
                info.push(format!("trace {:.17e}", kd.trace()));
            }
            let runs = jobs
                .par_iter()
                .map(|&(m, r)| solver.run(&h, m, a.k, a.z, seed_of(r)))
                .collect();
            (runs, info)
        }
    };
    let runs: Vec<SelectionResult> = runs.into_iter().collect::<CliResult<_>>()?;

    let mut wtr = csv_writer(Some(&a.out), &cfg, &info)?;
    wtr.write_record(["method", "replicate", "step", "objective"])?;
    for (&(m, r), run) in jobs.iter().zip(&runs) {
        for (t, obj) in run.objective.iter().enumerate() {
            wtr.write_record([m.name().to_string(), r.to_string(), (t + 1).to_string(), fmt_opt(Some(*obj))])?;
        }
    }
    finish(wtr, &[])?;

    let qpath = quantile_path(&a.out);
    let mut wtr = csv_writer(Some(&qpath), &cfg, &info)?;
    let mut head = vec!["method".to_string(), "step".to_string(), "replicates".to_string()];
    head.extend(a.quantiles.iter().map(|q| format!("q{q}")));
    wtr.write_record(&head)?;
    for &m in &methods {
        let mine: Vec<&SelectionResult> = jobs.iter().zip(&runs).filter(|((mm, _), _)| *mm == m).map(|(_, r)| r).collect();
        let steps = mine.iter().map(|r| r.len()).max().unwrap_or(0);
        for t in 0..steps {
            let mut vals: Vec<f64> = mine.iter().filter_map(|r| r.objective.get(t).copied()).collect();
            vals.sort_by(f64::total_cmp);
            let mut rec = vec![m.name().to_string(), (t + 1).to_string(), vals.len().to_string()];
            rec.extend(a.quantiles.iter().map(|&q| fmt_opt(Some(quantile(&vals, q)))));
            wtr.write_record(&rec)?;
        }
    }
    finish(wtr, &[])?;
    println!("{}", a.out.display());
    println!("{}", qpath.display());
    Ok(())
}
