//! Command-line arguments and the validated run configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nucsel_core::laplacian::{PreconMode, DEFAULT_PCG_TOL};
use nucsel_core::select::Method;
use nucsel_core::sketch::DEFAULT_Z;
use serde::Serialize;

use crate::output::CliError;

#[derive(Parser, Debug)]
#[command(name = "nucsel", version, about = "Greedy nuclear-norm column selection")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a test problem as Matrix Market files.
    Gen(GenArgs),
    /// Select kernel columns and write the objective trajectory.
    KernelSelect(KernelArgs),
    /// CUR decomposition of a sparse matrix.
    Cur(CurArgs),
    /// Select columns of an inverse rescaled Laplacian.
    LaplacianSelect(LaplacianArgs),
    /// Run the bound and identity suites.
    Verify(VerifyArgs),
    /// Run every method over replicates and summarize by quantiles.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SelectArgs {
    /// Number of columns.
    #[arg(long)]
    pub k: usize,
    /// Sketch width for matrix-free runs.
    #[arg(long, default_value_t = DEFAULT_Z)]
    pub z: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// nuclear, diag-max, diag-sample or uniform.
    #[arg(long, default_value = "nuclear")]
    pub method: Method,
    /// Use randomized diagonal estimates instead of exact ones.
    #[arg(long)]
    pub matrix_free: bool,
    /// Output path (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct LaplacianKnobs {
    /// Relative residual tolerance of the pseudoinverse solves.
    #[arg(long, default_value_t = DEFAULT_PCG_TOL)]
    pub pcg_tol: f64,
    /// Target error of the Chebyshev inverse square root.
    #[arg(long, default_value_t = 1e-8)]
    pub cheb_eps: f64,
    /// exact, identity, or external:<path>.
    #[arg(long, default_value = "exact")]
    pub precon: String,
    /// Stationary vector file (default: `<input stem>.h.mtx`).
    #[arg(long)]
    pub h: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Adversarial,
    Star,
    Gaussian,
    Spiral,
    Smiley,
    Reversible,
    RandomSpsd,
    SparseRandom,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    pub family: FamilyName,
    #[arg(long)]
    pub n: Option<usize>,
    /// Rows (sparse-random).
    #[arg(long)]
    pub m: Option<usize>,
    /// Clique size (adversarial).
    #[arg(long)]
    pub nc: Option<usize>,
    /// Outlier self-similarity (adversarial).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Center weight (star).
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Truncation tolerance of the spiral factor.
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub extra_edges: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// flat, geometric:<q> or power:<p>.
    #[arg(long)]
    pub decay: Option<String>,
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct KernelArgs {
    /// Kernel matrix, or a factor C with K = C Cᵀ.
    #[arg(long)]
    pub input: PathBuf,
    /// Treat a square input as a factor.
    #[arg(long)]
    pub factor: bool,
    #[command(flatten)]
    pub sel: SelectArgs,
    /// Stop once the next gain is at most alpha times the accumulated gain.
    #[arg(long, conflicts_with = "beta")]
    pub alpha: Option<f64>,
    /// Stop once the next gain is at most beta times the first gain.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Nominal relative score error used in the reported bounds.
    #[arg(long, default_value_t = 0.0)]
    pub zeta: f64,
    /// DPP subset size for the stopping-rule report.
    #[arg(long, default_value_t = 1)]
    pub s: usize,
}

#[derive(Args, Debug)]
pub struct CurArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Column count (default: same as --k).
    #[arg(long)]
    pub k_cols: Option<usize>,
    #[command(flatten)]
    pub sel: SelectArgs,
}

#[derive(Args, Debug)]
pub struct LaplacianArgs {
    /// Rescaled Laplacian L.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub knobs: LaplacianKnobs,
    #[command(flatten)]
    pub sel: SelectArgs,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Smaller instance counts.
    #[arg(long)]
    pub quick: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    Kernel,
    Laplacian,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub problem: Problem,
    #[arg(long)]
    pub input: PathBuf,
    /// Treat a square kernel input as a factor.
    #[arg(long)]
    pub factor: bool,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_Z)]
    pub z: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub matrix_free: bool,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    /// Comma-separated quantile levels.
    #[arg(long, default_value = "0.2,0.5,0.8", value_delimiter = ',')]
    pub quantiles: Vec<f64>,
    /// Comma-separated methods (default: all four).
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<Method>,
    #[command(flatten)]
    pub knobs: LaplacianKnobs,
    /// Long-format CSV; the summary goes to `<stem>.quantiles.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything that determines a run, written into every output header.
#[derive(Serialize, Debug, Default, Clone)]
pub struct RunConfig {
    pub subcommand: String,
    pub inputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_cols: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pcg_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cheb_eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precon: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta_nominal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantiles: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

fn mode_name(mf: bool) -> String {
    if mf { "matrix-free" } else { "deterministic" }.to_string()
}

fn path_str(p: &std::path::Path) -> String {
    p.display().to_string()
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl RunConfig {
    fn with_select(subcommand: &str, input: &std::path::Path, sel: &SelectArgs) -> Self {
        Self {
            subcommand: subcommand.into(),
            inputs: vec![path_str(input)],
            method: Some(sel.method.name().into()),
            k: Some(sel.k),
            z: sel.matrix_free.then_some(sel.z),
            seed: Some(sel.seed),
            mode: Some(mode_name(sel.matrix_free)),
            out: sel.out.as_deref().map(path_str),
            ..Default::default()
        }
    }

    fn with_knobs(mut self, knobs: &LaplacianKnobs, h: &std::path::Path, mf: bool) -> Self {
        self.inputs.push(path_str(h));
        if mf {
            self.pcg_tol = Some(knobs.pcg_tol);
            self.cheb_eps = Some(knobs.cheb_eps);
            self.precon = Some(knobs.precon.clone());
        }
        self
    }

    pub fn for_kernel(a: &KernelArgs) -> Self {
        Self {
            alpha: a.alpha,
            beta: a.beta,
            zeta_nominal: Some(a.zeta),
            ..Self::with_select("kernel-select", &a.input, &a.sel)
        }
    }

    pub fn for_cur(a: &CurArgs) -> Self {
        Self {
            k_cols: Some(a.k_cols.unwrap_or(a.sel.k)),
            ..Self::with_select("cur", &a.input, &a.sel)
        }
    }

    pub fn for_laplacian(a: &LaplacianArgs, h: &std::path::Path) -> Self {
        Self::with_select("laplacian-select", &a.input, &a.sel).with_knobs(&a.knobs, h, a.sel.matrix_free)
    }

    pub fn for_verify(a: &VerifyArgs) -> Self {
        let mut params = BTreeMap::new();
        params.insert("sizes".into(), if a.quick { "quick" } else { "full" }.into());
        Self {
            subcommand: "verify".into(),
            seed: Some(a.seed),
            params,
            out: a.out.as_deref().map(path_str),
            ..Default::default()
        }
    }

    pub fn for_gen(a: &GenArgs, params: BTreeMap<String, String>) -> Self {
        Self {
            subcommand: "gen".into(),
            seed: Some(a.seed),
            params,
            out: Some(path_str(&a.out)),
            ..Default::default()
        }
    }

    pub fn for_bench(a: &BenchArgs, methods: &[Method], h: Option<&std::path::Path>) -> Self {
        let mut cfg = Self {
            subcommand: "bench".into(),
            inputs: vec![path_str(&a.input)],
            methods: methods.iter().map(|m| m.name().to_string()).collect(),
            k: Some(a.k),
            z: a.matrix_free.then_some(a.z),
            seed: Some(a.seed),
            mode: Some(mode_name(a.matrix_free)),
            replicates: Some(a.replicates),
            quantiles: Some(a.quantiles.clone()),
            out: Some(path_str(&a.out)),
            ..Default::default()
        };
        cfg.params.insert("problem".into(), format!("{:?}", a.problem).to_lowercase());
        if let Some(h) = h {
            cfg = cfg.with_knobs(&a.knobs, h, a.matrix_free);
        }
        cfg
    }

    /// Range checks shared by every subcommand.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.k == Some(0) {
            return Err(usage("--k must be at least 1"));
        }
        if self.k_cols == Some(0) {
            return Err(usage("--k-cols must be at least 1"));
        }
        if self.z == Some(0) {
            return Err(usage("--z must be at least 1"));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if let Some(v) = v {
                if !(v > 0.0 && v < 1.0) {
                    return Err(usage(format!("--{name} must lie in (0, 1), got {v}")));
                }
            }
        }
        if self.alpha.is_some() && self.beta.is_some() {
            return Err(usage("--alpha and --beta are exclusive"));
        }
        if let Some(z) = self.zeta_nominal {
            if !(z >= 0.0) {
                return Err(usage(format!("--zeta must be nonnegative, got {z}")));
            }
        }
        if let Some(t) = self.pcg_tol {
            if !(t > 0.0 && t < 1.0) {
                return Err(usage(format!("--pcg-tol must lie in (0, 1), got {t}")));
            }
        }
        if let Some(e) = self.cheb_eps {
            if !(e > 0.0 && e < 1.0) {
                return Err(usage(format!("--cheb-eps must lie in (0, 1), got {e}")));
            }
        }
        if let Some(p) = &self.precon {
            p.parse::<PreconMode>().map_err(|e| usage(e.to_string()))?;
        }
        if self.replicates == Some(0) {
            return Err(usage("--replicates must be at least 1"));
        }
        if let Some(q) = &self.quantiles {
            if q.is_empty() || q.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(usage("--quantiles must be levels in [0, 1]"));
            }
        }
        Ok(())
    }
}
