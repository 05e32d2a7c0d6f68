use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Column chunk used by block products. Each chunk of the transposed input
/// block is traversed once per nonzero, so the width trades cache residency
/// against index-traversal overhead.
pub const DEFAULT_BLOCK_WIDTH: usize = 32;

/// Compressed sparse row matrix. Column indices are sorted and unique
/// within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMat {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMat {
    /// Assemble from (row, col, value) triplets. Duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, trips: &[(usize, usize, f64)]) -> Result<Self> {
        for &(i, j, _) in trips {
            if i >= rows || j >= cols {
                return Err(Error::Invalid(format!(
                    "triplet ({i},{j}) outside {rows}x{cols}"
                )));
            }
        }
        let mut counts = vec![0usize; rows + 1];
        for &(i, _, _) in trips {
            counts[i + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut idx = vec![0usize; trips.len()];
        let mut val = vec![0.0; trips.len()];
        for &(i, j, v) in trips {
            idx[next[i]] = j;
            val[next[i]] = v;
            next[i] += 1;
        }
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::with_capacity(trips.len());
        let mut values = Vec::with_capacity(trips.len());
        indptr.push(0);
        let mut buf: Vec<(usize, f64)> = Vec::new();
        for i in 0..rows {
            buf.clear();
            buf.extend((counts[i]..counts[i + 1]).map(|p| (idx[p], val[p])));
            buf.sort_by_key(|e| e.0);
            for &(j, v) in &buf {
                match indices.last() {
                    Some(&last) if last == j && indices.len() > indptr[i] => {
                        *values.last_mut().unwrap() += v;
                    }
                    _ => {
                        indices.push(j);
                        values.push(v);
                    }
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Build directly from CSR arrays, validating them.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if indptr.len() != rows + 1 || indices.len() != values.len() {
            return Err(Error::Invalid("inconsistent CSR array lengths".into()));
        }
        if indptr[0] != 0 || *indptr.last().unwrap() != indices.len() {
            return Err(Error::Invalid("CSR row pointers do not span the data".into()));
        }
        for i in 0..rows {
            if indptr[i] > indptr[i + 1] {
                return Err(Error::Invalid("CSR row pointers decrease".into()));
            }
            let row = &indices[indptr[i]..indptr[i + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.iter().any(|&j| j >= cols) {
                return Err(Error::Invalid(format!("row {i}: indices unsorted or out of range")));
            }
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Keep entries with |a_ij| > drop_tol.
    pub fn from_dense(m: &DMatrix<f64>, drop_tol: f64) -> Self {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v.abs() > drop_tol {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            indptr,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.iter() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entries of row `i` as (column, value) pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.indptr[i]..self.indptr[i + 1];
        match self.indices[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                indices[next[j]] = i;
                values[next[j]] = v;
                next[j] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            indptr: counts,
            indices,
            values,
        }
    }

    pub fn diag(&self) -> DVector<f64> {
        DVector::from_fn(self.rows.min(self.cols), |i, _| self.get(i, i))
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Largest |a_ij − a_ji|.
    pub fn asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for (i, j, v) in self.iter() {
            worst = worst.max((v - self.get(j, i)).abs());
        }
        worst
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.rows) {
            let mut s = 0.0;
            for p in self.indptr[i]..self.indptr[i + 1] {
                s += self.values[p] * x[self.indices[p]];
            }
            *yi = s;
        }
    }

    /// y = Aᵀ x.
    pub fn mul_t_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate().take(self.rows) {
            if xi == 0.0 {
                continue;
            }
            for p in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[p]] += self.values[p] * xi;
            }
        }
    }

    /// A·X for a dense block X, processed in column chunks of `width`.
    pub fn mul_block(&self, x: &DMatrix<f64>, width: usize) -> DMatrix<f64> {
        self.block_product(x, width, false)
    }

    /// Aᵀ·X for a dense block X.
    pub fn mul_t_block(&self, x: &DMatrix<f64>, width: usize) -> DMatrix<f64> {
        self.block_product(x, width, true)
    }

    fn block_product(&self, x: &DMatrix<f64>, width: usize, trans: bool) -> DMatrix<f64> {
        let (out_rows, in_rows) = if trans {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        };
        assert_eq!(x.nrows(), in_rows, "block product dimension mismatch");
        let z = x.ncols();
        let mut out = DMatrix::zeros(out_rows, z);
        let width = width.max(1);
        let mut c0 = 0;
        while c0 < z {
            let w = width.min(z - c0);
            // Row-major copy of the chunk so that each input row is contiguous.
            let xt: Vec<f64> = {
                let mut buf = vec![0.0; in_rows * w];
                for c in 0..w {
                    let col = x.column(c0 + c);
                    for r in 0..in_rows {
                        buf[r * w + c] = col[r];
                    }
                }
                buf
            };
            let mut yt = vec![0.0; out_rows * w];
            for i in 0..self.rows {
                let r = self.indptr[i]..self.indptr[i + 1];
                if trans {
                    let src = &xt[i * w..(i + 1) * w];
                    for p in r {
                        let j = self.indices[p];
                        let v = self.values[p];
                        let dst = &mut yt[j * w..(j + 1) * w];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += v * s;
                        }
                    }
                } else {
                    let dst = &mut yt[i * w..(i + 1) * w];
                    for p in r {
                        let j = self.indices[p];
                        let v = self.values[p];
                        let src = &xt[j * w..(j + 1) * w];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += v * s;
                        }
                    }
                }
            }
            for c in 0..w {
                let mut col = out.column_mut(c0 + c);
                for r in 0..out_rows {
                    col[r] = yt[r * w + c];
                }
            }
            c0 += w;
        }
        out
    }

    /// Is every stored entry on or below the diagonal?
    pub fn is_lower_triangular(&self) -> bool {
        self.iter().all(|(i, j, _)| j <= i)
    }

    /// Solve R y = x for lower-triangular R (stored here) with nonzero diagonal.
    pub fn solve_lower(&self, x: &mut [f64]) -> Result<()> {
        for i in 0..self.rows {
            let mut s = x[i];
            let mut diag = 0.0;
            for p in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[p];
                if j < i {
                    s -= self.values[p] * x[j];
                } else if j == i {
                    diag = self.values[p];
                }
            }
            if diag == 0.0 {
                return Err(Error::SingularPivot {
                    step: i,
                    index: i,
                    pivot: 0.0,
                });
            }
            x[i] = s / diag;
        }
        Ok(())
    }

    /// Solve Rᵀ y = x for lower-triangular R (stored here).
    pub fn solve_lower_t(&self, x: &mut [f64]) -> Result<()> {
        for i in (0..self.rows).rev() {
            let r = self.indptr[i]..self.indptr[i + 1];
            let diag = match self.indices[r.clone()].binary_search(&i) {
                Ok(p) => self.values[r.start + p],
                Err(_) => 0.0,
            };
            if diag == 0.0 {
                return Err(Error::SingularPivot {
                    step: i,
                    index: i,
                    pivot: 0.0,
                });
            }
            let xi = x[i] / diag;
            x[i] = xi;
            for p in r {
                let j = self.indices[p];
                if j < i {
                    x[j] -= self.values[p] * xi;
                }
            }
        }
        Ok(())
    }

    /// Solve R Y = X column by column for lower-triangular R, in place.
    pub fn solve_lower_block(&self, x: &mut DMatrix<f64>) -> Result<()> {
        self.solve_block(x, false)
    }

    /// Solve Rᵀ Y = X for lower-triangular R, in place.
    pub fn solve_lower_t_block(&self, x: &mut DMatrix<f64>) -> Result<()> {
        self.solve_block(x, true)
    }

    fn solve_block(&self, x: &mut DMatrix<f64>, trans: bool) -> Result<()> {
        let n = self.rows;
        assert_eq!(x.nrows(), n, "triangular solve dimension mismatch");
        let z = x.ncols();
        let mut c0 = 0;
        while c0 < z {
            let w = DEFAULT_BLOCK_WIDTH.min(z - c0);
            let mut buf = vec![0.0; n * w];
            for c in 0..w {
                let col = x.column(c0 + c);
                for r in 0..n {
                    buf[r * w + c] = col[r];
                }
            }
            let diag_of = |i: usize| -> Result<f64> {
                let r = self.indptr[i]..self.indptr[i + 1];
                match self.indices[r.clone()].binary_search(&i) {
                    Ok(p) if self.values[r.start + p] != 0.0 => Ok(self.values[r.start + p]),
                    _ => Err(Error::SingularPivot {
                        step: i,
                        index: i,
                        pivot: 0.0,
                    }),
                }
            };
            if !trans {
                for i in 0..n {
                    let dg = diag_of(i)?;
                    let (done, rest) = buf.split_at_mut(i * w);
                    let dst = &mut rest[..w];
                    for p in self.indptr[i]..self.indptr[i + 1] {
                        let j = self.indices[p];
                        if j < i {
                            let v = self.values[p];
                            for (d, s) in dst.iter_mut().zip(&done[j * w..(j + 1) * w]) {
                                *d -= v * s;
                            }
                        }
                    }
                    for d in dst.iter_mut() {
                        *d /= dg;
                    }
                }
            } else {
                for i in (0..n).rev() {
                    let dg = diag_of(i)?;
                    let (head, rest) = buf.split_at_mut(i * w);
                    let src = &mut rest[..w];
                    for d in src.iter_mut() {
                        *d /= dg;
                    }
                    for p in self.indptr[i]..self.indptr[i + 1] {
                        let j = self.indices[p];
                        if j < i {
                            let v = self.values[p];
                            for (d, s) in head[j * w..(j + 1) * w].iter_mut().zip(src.iter()) {
                                *d -= v * s;
                            }
                        }
                    }
                }
            }
            for c in 0..w {
                let mut col = x.column_mut(c0 + c);
                for r in 0..n {
                    col[r] = buf[r * w + c];
                }
            }
            c0 += w;
        }
        Ok(())
    }

    /// Connected components of the symmetric nonzero pattern (BFS).
    pub fn components(&self) -> usize {
        let n = self.rows;
        let t = self.transpose();
        let mut seen = vec![false; n];
        let mut count = 0;
        let mut queue = std::collections::VecDeque::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for (v, _) in self.row(u).chain(t.row(u)) {
                    if v < n && !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let a = SparseMat::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 4.0)]).unwrap();
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.get(1, 1), 0.0);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(SparseMat::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn triangular_solves() {
        let r = SparseMat::from_triplets(
            3,
            3,
            &[(0, 0, 2.0), (1, 0, 1.0), (1, 1, 3.0), (2, 1, -1.0), (2, 2, 1.5)],
        )
        .unwrap();
        let d = r.to_dense();
        let b = [1.0, 2.0, 3.0];
        let mut x = b;
        r.solve_lower(&mut x).unwrap();
        let chk = &d * DVector::from_column_slice(&x);
        assert!((chk - DVector::from_column_slice(&b)).norm() < 1e-14);
        let mut x = b;
        r.solve_lower_t(&mut x).unwrap();
        let chk = d.transpose() * DVector::from_column_slice(&x);
        assert!((chk - DVector::from_column_slice(&b)).norm() < 1e-14);
    }

    #[test]
    fn block_products_match_dense() {
        let a = SparseMat::from_triplets(3, 4, &[(0, 0, 1.0), (0, 3, 2.0), (2, 1, -1.0), (1, 2, 0.5)])
            .unwrap();
        let x = DMatrix::from_fn(4, 5, |i, j| (i + 2 * j) as f64);
        assert!((a.mul_block(&x, 2) - a.to_dense() * &x).norm() < 1e-14);
        let y = DMatrix::from_fn(3, 3, |i, j| (i * j) as f64 + 1.0);
        assert!((a.mul_t_block(&y, 2) - a.to_dense().transpose() * &y).norm() < 1e-14);
    }

    #[test]
    fn block_triangular_solves() {
        let r = SparseMat::from_triplets(3, 3, &[(0, 0, 2.0), (1, 0, 1.0), (1, 1, 3.0), (2, 1, -1.0), (2, 2, 0.5)]).unwrap();
        let b = DMatrix::from_fn(3, 40, |i, j| (i + 2 * j) as f64 - 7.0);
        let mut x = b.clone();
        r.solve_lower_block(&mut x).unwrap();
        assert!((r.to_dense() * &x - &b).norm() < 1e-10);
        let mut y = b.clone();
        r.solve_lower_t_block(&mut y).unwrap();
        assert!((r.to_dense().transpose() * &y - &b).norm() < 1e-10);
    }

    #[test]
    fn components_counted() {
        let a = SparseMat::from_triplets(4, 4, &[(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        assert_eq!(a.components(), 2);
    }
}
