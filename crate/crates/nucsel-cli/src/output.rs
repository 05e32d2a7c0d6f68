//! Output plumbing: comment headers, CSV writers, exit codes.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::RunConfig;

pub const BUILD_ID: &str = env!("NUCSEL_BUILD_ID");

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or unreadable input (exit 2).
    Usage(String),
    Io(String),
    /// Numerical failure (exit 3).
    Compute(String),
    /// An invariant re-check on the output failed (exit 1).
    Invariant(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Invariant(_) => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
            CliError::Compute(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Io(m) => write!(f, "i/o: {m}"),
            CliError::Compute(m) => write!(f, "compute: {m}"),
            CliError::Invariant(m) => write!(f, "invariant violated: {m}"),
        }
    }
}

impl From<nucsel_core::Error> for CliError {
    fn from(e: nucsel_core::Error) -> Self {
        use nucsel_core::Error as E;
        match e {
            E::Io(_) | E::Parse { .. } => CliError::Io(e.to_string()),
            E::Invalid(_) | E::Dim(_) | E::NotSquare { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Provenance lines (without comment markers).
pub fn header_lines(cfg: &RunConfig) -> Vec<String> {
    let json = serde_json::to_string(cfg).unwrap_or_else(|_| "{}".into());
    vec![
        format!("nucsel {} build {}", env!("CARGO_PKG_VERSION"), BUILD_ID),
        format!("config {json}"),
    ]
}

pub fn open(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

/// CSV writer preceded by `#` header lines.
pub fn csv_writer(path: Option<&Path>, cfg: &RunConfig, extra: &[String]) -> CliResult<csv::Writer<Box<dyn Write>>> {
    let mut w = open(path)?;
    for l in header_lines(cfg).iter().chain(extra) {
        writeln!(w, "# {l}")?;
    }
    Ok(csv::Writer::from_writer(w))
}

/// Append trailing `#` lines after the CSV body and flush.
pub fn finish(wtr: csv::Writer<Box<dyn Write>>, trailer: &[String]) -> CliResult<()> {
    let mut w = wtr.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    for l in trailer {
        writeln!(w, "# {l}")?;
    }
    w.flush()?;
    Ok(())
}

/// `dir/stem.tag.mtx` next to `path`.
pub fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{tag}.mtx"))
}

/// `dir/stem.quantiles.csv` next to `path`.
pub fn quantile_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("bench");
    path.with_file_name(format!("{stem}.quantiles.csv"))
}

/// Linearly interpolated sample quantile (sorted input).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let w = pos - lo as f64;
            sorted[lo] * (1.0 - w) + sorted[hi] * w
        }
    }
}

/// Format an optional float, empty when absent or non-finite.
pub fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.17e}"),
        _ => String::new(),
    }
}

/// Cap the rayon pool from `NUCSEL_THREADS`.
pub fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("NUCSEL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("NUCSEL_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Compute(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert!((quantile(&v, 0.2) - 1.8).abs() < 1e-15);
        assert_eq!(quantile(&[7.0], 0.8), 7.0);
    }

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("/a/star.mtx"), "h"), PathBuf::from("/a/star.h.mtx"));
        assert_eq!(quantile_path(Path::new("b.csv")), PathBuf::from("b.quantiles.csv"));
    }
}
