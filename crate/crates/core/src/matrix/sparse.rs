use super::{Banded, DenseMatrix};
use crate::error::{dim_err, Error, Result};

/// Compressed sparse column matrix.
///
/// Row indices are strictly increasing within each column. Stored zeros are
/// allowed and count as structural entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from raw CSC arrays, validating the structure.
    pub fn from_csc(
        rows: usize,
        cols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if col_ptr.len() != cols + 1 || col_ptr[0] != 0 {
            return Err(Error::Argument("malformed column pointer array".into()));
        }
        if row_idx.len() != values.len() || *col_ptr.last().unwrap() != row_idx.len() {
            return Err(Error::Argument("row index / value length mismatch".into()));
        }
        for j in 0..cols {
            if col_ptr[j] > col_ptr[j + 1] {
                return Err(Error::Argument("column pointers must be non-decreasing".into()));
            }
            let col = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            if col.windows(2).any(|w| w[0] >= w[1]) || col.iter().any(|&i| i >= rows) {
                return Err(Error::Argument(format!(
                    "row indices of column {j} must be strictly increasing and in bounds"
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(i, j, v) in triplets {
            if i >= rows || j >= cols {
                return Err(dim_err(format!("entry ({i}, {j}) outside {rows}x{cols}")));
            }
            sorted.push((i, j, v));
        }
        sorted.sort_by_key(|&(i, j, _)| (j, i));
        let mut col_ptr = vec![0; cols + 1];
        let mut row_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_idx.push(i);
            values.push(v);
            col_ptr[j + 1] += 1;
            last = Some((i, j));
        }
        for j in 0..cols {
            col_ptr[j + 1] += col_ptr[j];
        }
        Ok(Self {
            rows,
            cols,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            col_ptr: vec![0; cols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            rows: n,
            cols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Keeps the exact nonzeros of a dense matrix.
    pub fn from_dense(a: &DenseMatrix) -> Self {
        let (rows, cols) = a.shape();
        let mut col_ptr = Vec::with_capacity(cols + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..cols {
            for (i, &v) in a.column(j).iter().enumerate() {
                if v != 0.0 {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            rows,
            cols,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Structure taken from `pattern`, values read from `dense`.
    pub fn with_pattern_of(pattern: &SparseMatrix, dense: &DenseMatrix) -> Self {
        let mut out = pattern.clone();
        for j in 0..out.cols {
            for p in out.col_ptr[j]..out.col_ptr[j + 1] {
                out.values[p] = dense[(out.row_idx[p], j)];
            }
        }
        out
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

    pub fn density(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        self.nnz() as f64 / (self.rows as f64 * self.cols as f64)
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_indices(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row indices and values of column `j`.
    pub fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.col_ptr[j], self.col_ptr[j + 1]);
        (&self.row_idx[s..e], &self.values[s..e])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (rows, vals) = self.column(j);
        match rows.binary_search(&i) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.cols).flat_map(move |j| {
            let (rows, vals) = self.column(j);
            rows.iter().zip(vals).map(move |(&i, &v)| (i, j, v))
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] = v;
        }
        d
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.rows + 1];
        for &i in &self.row_idx {
            counts[i + 1] += 1;
        }
        for i in 0..self.rows {
            counts[i + 1] += counts[i];
        }
        let col_ptr = counts.clone();
        let mut next = counts;
        let mut row_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for j in 0..self.cols {
            let (rows, vals) = self.column(j);
            for (&i, &v) in rows.iter().zip(vals) {
                let p = next[i];
                row_idx[p] = j;
                values[p] = v;
                next[i] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Entrywise absolute values with the same structure.
    pub fn abs(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = v.abs());
        out
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// Sparse product `self * other` (Gustavson, column by column).
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != other.rows {
            return Err(dim_err(format!(
                "sparse product {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut acc = vec![0.0; self.rows];
        let mut mark = vec![usize::MAX; self.rows];
        let mut touched: Vec<usize> = Vec::new();
        let mut col_ptr = Vec::with_capacity(other.cols + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..other.cols {
            touched.clear();
            let (brows, bvals) = other.column(j);
            for (&p, &bv) in brows.iter().zip(bvals) {
                let (arows, avals) = self.column(p);
                for (&i, &av) in arows.iter().zip(avals) {
                    if mark[i] != j {
                        mark[i] = j;
                        acc[i] = 0.0;
                        touched.push(i);
                    }
                    acc[i] += av * bv;
                }
            }
            touched.sort_unstable();
            for &i in &touched {
                row_idx.push(i);
                values.push(acc[i]);
            }
            col_ptr.push(row_idx.len());
        }
        Ok(SparseMatrix {
            rows: self.rows,
            cols: other.cols,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Boolean structure of `self * other`: every stored entry becomes 1.
    pub fn pattern_product(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        let mut p = self.structure().matmul(&other.structure())?;
        p.values.iter_mut().for_each(|v| *v = 1.0);
        Ok(p)
    }

    /// Same structure with all stored values set to one.
    pub fn structure(&self) -> SparseMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = 1.0);
        out
    }

    /// `sum_i coeffs[i] * mats[i]` on the union of the structures.
    pub fn linear_combination(coeffs: &[f64], mats: &[&SparseMatrix]) -> Result<SparseMatrix> {
        let first = mats
            .first()
            .ok_or_else(|| Error::Argument("empty linear combination".into()))?;
        let (rows, cols) = (first.rows, first.cols);
        if mats.iter().any(|m| m.rows != rows || m.cols != cols) {
            return Err(dim_err("linear combination of differently sized matrices"));
        }
        let mut acc = vec![0.0; rows];
        let mut mark = vec![usize::MAX; rows];
        let mut touched = Vec::new();
        let mut col_ptr = Vec::with_capacity(cols + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..cols {
            touched.clear();
            for (m, &c) in mats.iter().zip(coeffs) {
                let (r, v) = m.column(j);
                for (&i, &x) in r.iter().zip(v) {
                    if mark[i] != j {
                        mark[i] = j;
                        acc[i] = 0.0;
                        touched.push(i);
                    }
                    acc[i] += c * x;
                }
            }
            touched.sort_unstable();
            for &i in &touched {
                row_idx.push(i);
                values.push(acc[i]);
            }
            col_ptr.push(row_idx.len());
        }
        Ok(SparseMatrix {
            rows,
            cols,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Frobenius inner product with another sparse matrix of the same shape.
    pub fn frobenius(&self, other: &SparseMatrix) -> f64 {
        let mut sum = 0.0;
        for j in 0..self.cols {
            let (ar, av) = self.column(j);
            let (br, bv) = other.column(j);
            let (mut p, mut q) = (0, 0);
            while p < ar.len() && q < br.len() {
                match ar[p].cmp(&br[q]) {
                    std::cmp::Ordering::Less => p += 1,
                    std::cmp::Ordering::Greater => q += 1,
                    std::cmp::Ordering::Equal => {
                        sum += av[p] * bv[q];
                        p += 1;
                        q += 1;
                    }
                }
            }
        }
        sum
    }

    pub fn frobenius_dense(&self, other: &DenseMatrix) -> f64 {
        self.triplets().map(|(i, j, v)| v * other[(i, j)]).sum()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// `self * x` for dense `x`.
    pub fn mul_dense(&self, x: &DenseMatrix) -> DenseMatrix {
        let mut y = DenseMatrix::zeros(self.rows, x.ncols());
        self.mul_dense_acc(x, 1.0, &mut y);
        y
    }

    /// `y += alpha * self * x`.
    pub fn mul_dense_acc(&self, x: &DenseMatrix, alpha: f64, y: &mut DenseMatrix) {
        debug_assert_eq!(self.cols, x.nrows());
        let rows = self.rows;
        let ys = y.as_mut_slice();
        let xs = x.as_slice();
        for c in 0..x.ncols() {
            let xcol = &xs[c * self.cols..(c + 1) * self.cols];
            let ycol = &mut ys[c * rows..(c + 1) * rows];
            for (p, &xv) in xcol.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let s = alpha * xv;
                let (ri, rv) = self.column(p);
                for (&i, &v) in ri.iter().zip(rv) {
                    ycol[i] += v * s;
                }
            }
        }
    }

    /// `x * self^T` for dense `x`.
    pub fn mul_dense_right_t(&self, x: &DenseMatrix) -> DenseMatrix {
        let mut y = DenseMatrix::zeros(x.nrows(), self.rows);
        self.mul_dense_right_t_acc(x, 1.0, &mut y);
        y
    }

    /// `y += alpha * x * self^T`. Column `i` of the result gathers
    /// `self(i, c) * x(:, c)` over the stored entries of column `c`.
    pub fn mul_dense_right_t_acc(&self, x: &DenseMatrix, alpha: f64, y: &mut DenseMatrix) {
        debug_assert_eq!(x.ncols(), self.cols);
        let m = x.nrows();
        let xs = x.as_slice();
        let ys = y.as_mut_slice();
        for c in 0..self.cols {
            let xcol = &xs[c * m..(c + 1) * m];
            let (ri, rv) = self.column(c);
            for (&i, &v) in ri.iter().zip(rv) {
                let s = alpha * v;
                let ycol = &mut ys[i * m..(i + 1) * m];
                for (yv, &xv) in ycol.iter_mut().zip(xcol) {
                    *yv += s * xv;
                }
            }
        }
    }

    /// Values of `self(rows, j)` for a sorted row list, zeros where not stored.
    pub fn gather_column(&self, j: usize, rows: &[usize], out: &mut [f64]) {
        let (ri, rv) = self.column(j);
        let (mut p, mut q) = (0, 0);
        while q < rows.len() {
            while p < ri.len() && ri[p] < rows[q] {
                p += 1;
            }
            out[q] = if p < ri.len() && ri[p] == rows[q] { rv[p] } else { 0.0 };
            q += 1;
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let t = self.transpose();
        let scale = self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let diff = SparseMatrix::linear_combination(&[1.0, -1.0], &[self, &t]).unwrap();
        diff.values.iter().all(|v| v.abs() <= tol * scale.max(1.0))
    }
}

impl Banded for SparseMatrix {
    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn band_extent(&self) -> usize {
        self.triplets().map(|(i, j, _)| i.abs_diff(j)).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SparseMatrix {
        SparseMatrix::from_triplets(
            3,
            4,
            &[(0, 0, 1.0), (2, 0, 2.0), (1, 1, 3.0), (0, 3, 4.0), (2, 3, 5.0), (2, 3, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn triplets_sum_duplicates() {
        let s = sample();
        assert_eq!(s.nnz(), 5);
        assert_eq!(s.get(2, 3), 6.0);
        assert_eq!(s.get(1, 3), 0.0);
    }

    #[test]
    fn transpose_matches_dense() {
        let s = sample();
        assert_eq!(s.transpose().to_dense(), s.to_dense().transpose());
    }

    #[test]
    fn products_match_dense() {
        let s = sample();
        let t = SparseMatrix::from_triplets(4, 2, &[(0, 0, 1.5), (3, 0, -1.0), (1, 1, 2.0), (2, 1, 7.0)])
            .unwrap();
        assert_eq!(s.matmul(&t).unwrap().to_dense(), s.to_dense() * t.to_dense());
        let x = DenseMatrix::from_fn(4, 3, |i, j| (i + 2 * j) as f64 - 1.5);
        assert_eq!(s.mul_dense(&x), s.to_dense() * &x);
        let z = DenseMatrix::from_fn(5, 4, |i, j| (i * j) as f64 + 0.25);
        assert_eq!(s.mul_dense_right_t(&z), &z * s.to_dense().transpose());
    }

    #[test]
    fn from_csc_rejects_unsorted_rows() {
        assert!(SparseMatrix::from_csc(3, 1, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csc(3, 1, vec![0, 2], vec![1, 2], vec![1.0, 1.0]).is_ok());
    }

    #[test]
    fn linear_combination_and_frobenius() {
        let a = sample();
        let b = SparseMatrix::from_triplets(3, 4, &[(1, 1, 1.0), (1, 2, 4.0)]).unwrap();
        let c = SparseMatrix::linear_combination(&[2.0, -1.0], &[&a, &b]).unwrap();
        assert_eq!(c.to_dense(), a.to_dense() * 2.0 - b.to_dense());
        let ad = a.to_dense();
        let bd = b.to_dense();
        assert_eq!(a.frobenius(&b), ad.dot(&bd));
        assert_eq!(a.frobenius_dense(&bd), ad.dot(&bd));
    }

    #[test]
    fn gather_column_fills_missing_with_zero() {
        let s = sample();
        let mut out = [9.0; 3];
        s.gather_column(3, &[0, 1, 2], &mut out);
        assert_eq!(out, [4.0, 0.0, 6.0]);
    }
}
