use super::{Banded, DenseMatrix, SparseMatrix};
use crate::error::{dim_err, Error, Result};

/// Products whose density exceeds this fraction are stored densely.
pub(crate) const DENSE_PROMOTION: f64 = 0.25;

/// A square coefficient matrix held either densely or in compressed columns.
#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    Dense(DenseMatrix),
    Sparse(SparseMatrix),
}

impl From<DenseMatrix> for Factor {
    fn from(d: DenseMatrix) -> Self {
        Factor::Dense(d)
    }
}

impl From<SparseMatrix> for Factor {
    fn from(s: SparseMatrix) -> Self {
        Factor::Sparse(s)
    }
}

impl Factor {
    pub fn identity(n: usize) -> Self {
        Factor::Sparse(SparseMatrix::identity(n))
    }

    pub fn nrows(&self) -> usize {
        match self {
            Factor::Dense(d) => d.nrows(),
            Factor::Sparse(s) => s.rows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Factor::Dense(d) => d.ncols(),
            Factor::Sparse(s) => s.cols(),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Factor::Sparse(_))
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            Factor::Dense(d) => d.clone(),
            Factor::Sparse(s) => s.to_dense(),
        }
    }

    pub fn to_sparse(&self) -> SparseMatrix {
        match self {
            Factor::Dense(d) => SparseMatrix::from_dense(d),
            Factor::Sparse(s) => s.clone(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Factor::Dense(d) => d[(i, j)],
            Factor::Sparse(s) => s.get(i, j),
        }
    }

    pub fn transpose(&self) -> Factor {
        match self {
            Factor::Dense(d) => Factor::Dense(d.transpose()),
            Factor::Sparse(s) => Factor::Sparse(s.transpose()),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius(self).sqrt()
    }

    /// Frobenius inner product with another factor of the same shape.
    pub fn frobenius(&self, other: &Factor) -> f64 {
        match (self, other) {
            (Factor::Dense(a), Factor::Dense(b)) => super::dot(a.as_slice(), b.as_slice()),
            (Factor::Sparse(a), Factor::Sparse(b)) => a.frobenius(b),
            (Factor::Sparse(a), Factor::Dense(b)) | (Factor::Dense(b), Factor::Sparse(a)) => {
                a.frobenius_dense(b)
            }
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            Factor::Dense(d) => d.trace(),
            Factor::Sparse(s) => s.trace(),
        }
    }

    /// `self * x`.
    pub fn mul_dense(&self, x: &DenseMatrix) -> DenseMatrix {
        match self {
            Factor::Dense(d) => d * x,
            Factor::Sparse(s) => s.mul_dense(x),
        }
    }

    /// `x * self^T`.
    pub fn mul_dense_right_t(&self, x: &DenseMatrix) -> DenseMatrix {
        match self {
            Factor::Dense(d) => x * d.transpose(),
            Factor::Sparse(s) => s.mul_dense_right_t(x),
        }
    }

    /// `y += alpha * self * x * other^T` evaluated as `(self * x) * other^T`.
    pub(crate) fn sandwich_acc(&self, x: &DenseMatrix, other: &Factor, alpha: f64, y: &mut DenseMatrix) {
        let left = self.mul_dense(x);
        match other {
            Factor::Dense(d) => y.gemm(alpha, &left, &d.transpose(), 1.0),
            Factor::Sparse(s) => s.mul_dense_right_t_acc(&left, alpha, y),
        }
    }

    /// Product `self * other`, sparse when both are sparse and the result is
    /// not too dense.
    pub fn matmul(&self, other: &Factor) -> Result<Factor> {
        if self.ncols() != other.nrows() {
            return Err(dim_err(format!(
                "product of {}x{} and {}x{}",
                self.nrows(),
                self.ncols(),
                other.nrows(),
                other.ncols()
            )));
        }
        Ok(match (self, other) {
            (Factor::Sparse(a), Factor::Sparse(b)) => promote(a.matmul(b)?),
            (Factor::Sparse(a), Factor::Dense(b)) => Factor::Dense(a.mul_dense(b)),
            (Factor::Dense(a), Factor::Sparse(b)) => {
                // a * b = (b^T a^T)^T
                Factor::Dense(b.transpose().mul_dense(&a.transpose()).transpose())
            }
            (Factor::Dense(a), Factor::Dense(b)) => Factor::Dense(a * b),
        })
    }

    /// `self^T * other`.
    pub fn tr_matmul(&self, other: &Factor) -> Result<Factor> {
        match (self, other) {
            (Factor::Dense(a), Factor::Dense(b)) => {
                if a.nrows() != b.nrows() {
                    return Err(dim_err("transposed product with mismatched rows"));
                }
                Ok(Factor::Dense(a.tr_mul(b)))
            }
            _ => self.transpose().matmul(other),
        }
    }

    /// `self * other^T`.
    pub fn matmul_tr(&self, other: &Factor) -> Result<Factor> {
        match (self, other) {
            (Factor::Dense(a), Factor::Dense(b)) => {
                if a.ncols() != b.ncols() {
                    return Err(dim_err("product with transpose, mismatched columns"));
                }
                Ok(Factor::Dense(a * b.transpose()))
            }
            _ => self.matmul(&other.transpose()),
        }
    }

    /// `sum_i coeffs[i] * mats[i]`. Sparse (on the union structure) when all
    /// inputs are sparse, dense otherwise.
    pub fn linear_combination(coeffs: &[f64], mats: &[&Factor]) -> Result<Factor> {
        if coeffs.len() != mats.len() || mats.is_empty() {
            return Err(Error::Argument("linear combination needs matching, non-empty lists".into()));
        }
        let (r, c) = (mats[0].nrows(), mats[0].ncols());
        if mats.iter().any(|m| m.nrows() != r || m.ncols() != c) {
            return Err(dim_err("linear combination of differently sized factors"));
        }
        if mats.iter().all(|m| m.is_sparse()) {
            let sparse: Vec<&SparseMatrix> = mats
                .iter()
                .map(|m| match m {
                    Factor::Sparse(s) => s,
                    Factor::Dense(_) => unreachable!(),
                })
                .collect();
            return Ok(Factor::Sparse(SparseMatrix::linear_combination(coeffs, &sparse)?));
        }
        let mut out = DenseMatrix::zeros(r, c);
        for (m, &a) in mats.iter().zip(coeffs) {
            m.add_to(a, &mut out);
        }
        Ok(Factor::Dense(out))
    }

    /// `y += alpha * self`.
    pub fn add_to(&self, alpha: f64, y: &mut DenseMatrix) {
        match self {
            Factor::Dense(d) => *y += d * alpha,
            Factor::Sparse(s) => {
                for (i, j, v) in s.triplets() {
                    y[(i, j)] += alpha * v;
                }
            }
        }
    }

    pub fn scale(&self, alpha: f64) -> Factor {
        match self {
            Factor::Dense(d) => Factor::Dense(d * alpha),
            Factor::Sparse(s) => Factor::Sparse(s.scale(alpha)),
        }
    }

    /// `(self + self^T) / 2`.
    pub fn symmetric_part(&self) -> Factor {
        match self {
            Factor::Dense(d) => Factor::Dense((d + d.transpose()) * 0.5),
            Factor::Sparse(s) => Factor::Sparse(
                SparseMatrix::linear_combination(&[0.5, 0.5], &[s, &s.transpose()])
                    .expect("square factor"),
            ),
        }
    }

    /// Dense submatrix `self(rows, cols)` for sorted index lists.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(rows.len(), cols.len());
        match self {
            Factor::Dense(d) => {
                for (b, &j) in cols.iter().enumerate() {
                    for (a, &i) in rows.iter().enumerate() {
                        out[(a, b)] = d[(i, j)];
                    }
                }
            }
            Factor::Sparse(s) => {
                for (b, &j) in cols.iter().enumerate() {
                    s.gather_column(j, rows, out.column_mut(b).as_mut_slice());
                }
            }
        }
        out
    }

    /// Positions of the entries this factor may hold: stored entries for
    /// sparse factors, exact nonzeros for dense ones.
    pub fn sparsity(&self) -> Vec<(usize, usize)> {
        match self {
            Factor::Sparse(s) => s.triplets().map(|(i, j, _)| (i, j)).collect(),
            Factor::Dense(d) => {
                let mut out = Vec::new();
                for j in 0..d.ncols() {
                    for i in 0..d.nrows() {
                        if d[(i, j)] != 0.0 {
                            out.push((i, j));
                        }
                    }
                }
                out
            }
        }
    }

    /// Positions of nonzero values (stored zeros excluded).
    pub fn nonzeros(&self) -> Vec<(usize, usize)> {
        match self {
            Factor::Sparse(s) => s.triplets().filter(|t| t.2 != 0.0).map(|(i, j, _)| (i, j)).collect(),
            Factor::Dense(_) => self.sparsity(),
        }
    }
}

impl Banded for Factor {
    fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }

    fn band_extent(&self) -> usize {
        match self {
            Factor::Dense(d) => d.band_extent(),
            Factor::Sparse(s) => s.band_extent(),
        }
    }
}

fn promote(s: SparseMatrix) -> Factor {
    if s.density() > DENSE_PROMOTION {
        Factor::Dense(s.to_dense())
    } else {
        Factor::Sparse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + i as f64));
            if i + 1 < n {
                t.push((i + 1, i, -1.0));
                t.push((i, i + 1, 0.5));
            }
        }
        SparseMatrix::from_triplets(n, n, &t).unwrap()
    }

    #[test]
    fn mixed_products_agree_with_dense() {
        let s = Factor::Sparse(tri(6));
        let d = Factor::Dense(DenseMatrix::from_fn(6, 6, |i, j| (i as f64 - j as f64) * 0.3 + 1.0));
        for (a, b) in [(&s, &d), (&d, &s), (&s, &s), (&d, &d)] {
            let want = a.to_dense() * b.to_dense();
            assert!((a.matmul(b).unwrap().to_dense() - &want).norm() < 1e-13);
            let want_t = a.to_dense().transpose() * b.to_dense();
            assert!((a.tr_matmul(b).unwrap().to_dense() - want_t).norm() < 1e-13);
            assert!((a.frobenius(b) - a.to_dense().dot(&b.to_dense())).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_promotion_threshold() {
        // tridiagonal squared is pentadiagonal: 24 of 36 entries > 25%
        let s = Factor::Sparse(tri(6));
        assert!(!s.matmul(&s).unwrap().is_sparse());
        let big = Factor::Sparse(tri(40));
        assert!(big.matmul(&big).unwrap().is_sparse());
    }

    #[test]
    fn sandwich_matches_dense() {
        let a = Factor::Sparse(tri(4));
        let b = Factor::Dense(DenseMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64));
        let x = DenseMatrix::from_fn(3, 4, |i, j| i as f64 - 0.5 * j as f64);
        let mut y = DenseMatrix::zeros(3, 4);
        b.sandwich_acc(&x, &a, 2.0, &mut y);
        let want = b.to_dense() * &x * a.to_dense().transpose() * 2.0;
        assert!((y - want).norm() < 1e-12);
    }
}
