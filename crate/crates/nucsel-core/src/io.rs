//! Matrix Market reading and writing.
//!
//! Coordinate files (`general` or `symmetric`, `real`/`integer`/`pattern`)
//! load into [`SparseMat`]; array files load into dense matrices. Indices are
//! 1-based on disk and 0-based in memory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linops::SparseMat;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Symmetry {
    General,
    Symmetric,
}

/// Parsed contents of a Matrix Market file.
#[derive(Clone, Debug)]
pub enum MmData {
    Sparse(SparseMat),
    Dense(DMatrix<f64>),
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn read_mm(path: impl AsRef<Path>) -> Result<MmData> {
    let f = File::open(path.as_ref())?;
    parse_mm(BufReader::new(f))
}

pub fn parse_mm(reader: impl BufRead) -> Result<MmData> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file"))?;
    let header = header?;
    let toks: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if toks.len() < 5 || toks[0] != "%%matrixmarket" || toks[1] != "matrix" {
        return Err(perr(1, "missing %%MatrixMarket matrix header"));
    }
    let coordinate = match toks[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => return Err(perr(1, format!("unsupported format {other}"))),
    };
    let pattern = match toks[3].as_str() {
        "real" | "integer" | "double" => false,
        "pattern" if coordinate => true,
        other => return Err(perr(1, format!("unsupported field {other}"))),
    };
    let symmetry = match toks[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => return Err(perr(1, format!("unsupported symmetry {other}"))),
    };

    let mut body = lines.filter_map(|(i, l)| match l {
        Ok(s) => {
            let t = s.trim().to_string();
            if t.is_empty() || t.starts_with('%') {
                None
            } else {
                Some(Ok((i + 1, t)))
            }
        }
        Err(e) => Some(Err(Error::from(e))),
    });
    let (sl, size) = body.next().ok_or_else(|| perr(2, "missing size line"))??;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| perr(sl, format!("bad size token {t}"))))
        .collect::<Result<_>>()?;

    let num = |ln: usize, t: Option<&str>| -> Result<f64> {
        t.ok_or_else(|| perr(ln, "missing value"))?
            .parse::<f64>()
            .map_err(|_| perr(ln, "bad numeric value"))
    };

    if coordinate {
        if dims.len() != 3 {
            return Err(perr(sl, "coordinate size line needs rows cols nnz"));
        }
        let (rows, cols, nnz) = (dims[0], dims[1], dims[2]);
        let mut trips = Vec::with_capacity(nnz * if symmetry == Symmetry::Symmetric { 2 } else { 1 });
        let mut seen = 0;
        for item in body {
            let (ln, l) = item?;
            let mut it = l.split_whitespace();
            let i: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| perr(ln, "bad row index"))?;
            let j: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| perr(ln, "bad column index"))?;
            if i == 0 || j == 0 || i > rows || j > cols {
                return Err(perr(ln, format!("index ({i},{j}) out of range")));
            }
            let v = if pattern { 1.0 } else { num(ln, it.next())? };
            trips.push((i - 1, j - 1, v));
            if symmetry == Symmetry::Symmetric && i != j {
                trips.push((j - 1, i - 1, v));
            }
            seen += 1;
        }
        if seen != nnz {
            return Err(perr(sl, format!("expected {nnz} entries, found {seen}")));
        }
        Ok(MmData::Sparse(SparseMat::from_triplets(rows, cols, &trips)?))
    } else {
        if dims.len() != 2 {
            return Err(perr(sl, "array size line needs rows cols"));
        }
        let (rows, cols) = (dims[0], dims[1]);
        let mut vals = Vec::with_capacity(rows * cols);
        let mut last = sl;
        for item in body {
            let (ln, l) = item?;
            last = ln;
            for t in l.split_whitespace() {
                vals.push(num(ln, Some(t))?);
            }
        }
        let mut m = DMatrix::zeros(rows, cols);
        match symmetry {
            Symmetry::General => {
                if vals.len() != rows * cols {
                    return Err(perr(last, format!("expected {} values, found {}", rows * cols, vals.len())));
                }
                m.copy_from_slice(&vals);
            }
            Symmetry::Symmetric => {
                if rows != cols || vals.len() != rows * (rows + 1) / 2 {
                    return Err(perr(last, "symmetric array needs the lower triangle"));
                }
                let mut p = 0;
                for j in 0..cols {
                    for i in j..rows {
                        m[(i, j)] = vals[p];
                        m[(j, i)] = vals[p];
                        p += 1;
                    }
                }
            }
        }
        Ok(MmData::Dense(m))
    }
}

/// Read a coordinate file, or an array file converted to sparse.
pub fn read_sparse(path: impl AsRef<Path>) -> Result<SparseMat> {
    Ok(match read_mm(path)? {
        MmData::Sparse(s) => s,
        MmData::Dense(d) => SparseMat::from_dense(&d, 0.0),
    })
}

/// Read a dense matrix from an array file (coordinate files are densified).
pub fn read_dense(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    Ok(match read_mm(path)? {
        MmData::Sparse(s) => s.to_dense(),
        MmData::Dense(d) => d,
    })
}

/// Read a vector: an n×1 (or 1×n) Matrix Market array, or plain
/// whitespace-separated numbers.
pub fn read_vector(path: impl AsRef<Path>) -> Result<DVector<f64>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    if text.trim_start().starts_with("%%") {
        let m = match parse_mm(text.as_bytes())? {
            MmData::Dense(d) => d,
            MmData::Sparse(s) => s.to_dense(),
        };
        if m.ncols() != 1 && m.nrows() != 1 {
            return Err(perr(1, "vector file must have one row or one column"));
        }
        return Ok(DVector::from_column_slice(m.as_slice()));
    }
    let mut v = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() || l.starts_with('%') || l.starts_with('#') {
            continue;
        }
        for t in l.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            v.push(t.parse::<f64>().map_err(|_| perr(i + 1, format!("bad number {t}")))?);
        }
    }
    Ok(DVector::from_vec(v))
}

pub fn write_sparse(path: impl AsRef<Path>, a: &SparseMat, symmetry: Symmetry, comments: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    let sym = match symmetry {
        Symmetry::General => "general",
        Symmetry::Symmetric => "symmetric",
    };
    writeln!(w, "%%MatrixMarket matrix coordinate real {sym}")?;
    for c in comments {
        writeln!(w, "% {c}")?;
    }
    let keep = |i: usize, j: usize| symmetry == Symmetry::General || j <= i;
    let nnz = a.iter().filter(|&(i, j, _)| keep(i, j)).count();
    writeln!(w, "{} {} {}", a.rows(), a.cols(), nnz)?;
    for (i, j, v) in a.iter() {
        if keep(i, j) {
            writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_dense(path: impl AsRef<Path>, m: &DMatrix<f64>, comments: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "%%MatrixMarket matrix array real general")?;
    for c in comments {
        writeln!(w, "% {c}")?;
    }
    writeln!(w, "{} {}", m.nrows(), m.ncols())?;
    for v in m.iter() {
        writeln!(w, "{v:e}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_vector(path: impl AsRef<Path>, v: &DVector<f64>, comments: &[String]) -> Result<()> {
    write_dense(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()), comments)
}
