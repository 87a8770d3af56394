use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Side};
use crate::matrix::{Factor, IndexSet, SparseMatrix};
use crate::operator::KroneckerOperator;

/// Allowed nonzero rows `J_j` of every column of a square factor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    dim: usize,
    col_ptr: Vec<usize>,
    rows: Vec<usize>,
}

impl SparsityPattern {
    pub fn from_columns(columns: &[IndexSet], dim: usize) -> Result<Self> {
        if columns.len() != dim {
            return Err(Error::Argument(format!(
                "pattern has {} columns, dimension is {dim}",
                columns.len()
            )));
        }
        let mut col_ptr = Vec::with_capacity(dim + 1);
        let mut rows = Vec::new();
        col_ptr.push(0);
        for (j, c) in columns.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::Argument(format!("pattern column {j} is empty")));
            }
            if c.as_slice().last().is_some_and(|&i| i >= dim) {
                return Err(Error::Argument(format!("pattern column {j} exceeds dimension {dim}")));
            }
            rows.extend_from_slice(c.as_slice());
            col_ptr.push(rows.len());
        }
        Ok(Self { dim, col_ptr, rows })
    }

    /// Structure of a square sparse matrix; every column must hold an entry.
    pub fn from_structure(s: &SparseMatrix) -> Result<Self> {
        if s.rows() != s.cols() {
            return Err(Error::Argument("pattern source must be square".into()));
        }
        let dim = s.rows();
        let col_ptr = s.col_ptr().to_vec();
        if let Some(j) = (0..dim).find(|&j| col_ptr[j] == col_ptr[j + 1]) {
            return Err(Error::Argument(format!("pattern column {j} is empty")));
        }
        Ok(Self {
            dim,
            col_ptr,
            rows: s.row_indices().to_vec(),
        })
    }

    pub fn diagonal(dim: usize) -> Self {
        Self {
            dim,
            col_ptr: (0..=dim).collect(),
            rows: (0..dim).collect(),
        }
    }

    pub fn full(dim: usize) -> Self {
        Self {
            dim,
            col_ptr: (0..=dim).map(|j| j * dim).collect(),
            rows: (0..dim).flat_map(|_| 0..dim).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sorted allowed rows of column `j`.
    pub fn column(&self, j: usize) -> &[usize] {
        &self.rows[self.col_ptr[j]..self.col_ptr[j + 1]]
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    pub fn density(&self) -> f64 {
        if self.dim == 0 {
            0.0
        } else {
            self.nnz() as f64 / (self.dim * self.dim) as f64
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.column(j).binary_search(&i).is_ok()
    }

    /// Sparse matrix with this structure, values in column-major pattern order.
    pub fn with_values(&self, values: Vec<f64>) -> Result<SparseMatrix> {
        SparseMatrix::from_csc(self.dim, self.dim, self.col_ptr.clone(), self.rows.clone(), values)
    }

    /// Restriction of a factor to the pattern (entries outside are dropped).
    pub fn project(&self, f: &Factor) -> Result<SparseMatrix> {
        let mut values = vec![0.0; self.nnz()];
        let sub = match f {
            Factor::Sparse(s) => s,
            Factor::Dense(d) => {
                for j in 0..self.dim {
                    for (p, &i) in self.column(j).iter().enumerate() {
                        values[self.col_ptr[j] + p] = d[(i, j)];
                    }
                }
                return self.with_values(values);
            }
        };
        for j in 0..self.dim {
            let range = self.col_ptr[j]..self.col_ptr[j + 1];
            sub.gather_column(j, self.column(j), &mut values[range]);
        }
        self.with_values(values)
    }

    /// Whether every stored entry of `f` lies inside the pattern.
    pub fn conforms(&self, f: &Factor) -> bool {
        f.nrows() == self.dim && f.ncols() == self.dim && f.sparsity().into_iter().all(|(i, j)| self.contains(i, j))
    }
}

/// How a pattern is derived from `S = sum_k F_k` on one side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PatternVariant {
    /// Structure of `(|S|^T |S|)^p`.
    #[default]
    Gram,
    /// Structure of `S^p`.
    Plain,
}

/// Pattern descriptor as it appears in run configurations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatternSpec {
    pub variant: PatternVariant,
    pub power: usize,
    /// Density above which a warning is attached.
    pub density_cap: f64,
}

impl Default for PatternSpec {
    fn default() -> Self {
        Self {
            variant: PatternVariant::Gram,
            power: 1,
            density_cap: 0.2,
        }
    }
}

/// A derived pattern together with any density warning.
#[derive(Debug, Clone)]
pub struct BuiltPattern {
    pub pattern: SparsityPattern,
    pub warning: Option<String>,
}

/// Structural pattern from powers of the summed factors of one side. The
/// diagonal is always included so that no column is empty.
pub fn build_pattern(op: &KroneckerOperator, side: Side, spec: &PatternSpec) -> Result<BuiltPattern> {
    let factors = match side {
        Side::Right => op.right_factors(),
        Side::Left => op.left_factors(),
    };
    let dim = factors[0].nrows();
    let parts: Vec<SparseMatrix> = factors.iter().map(|f| f.to_sparse().structure()).collect();
    let refs: Vec<&SparseMatrix> = parts.iter().collect();
    let sum = SparseMatrix::linear_combination(&vec![1.0; refs.len()], &refs)?.structure();
    let base = match spec.variant {
        PatternVariant::Gram => sum.transpose().pattern_product(&sum)?,
        PatternVariant::Plain => sum,
    };
    let mut acc = SparseMatrix::identity(dim);
    for _ in 0..spec.power {
        acc = acc.pattern_product(&base)?;
    }
    let with_diag = SparseMatrix::linear_combination(&[1.0, 1.0], &[&acc, &SparseMatrix::identity(dim)])?;
    let pattern = SparsityPattern::from_structure(&with_diag)?;
    let density = pattern.density();
    let warning = (density > spec.density_cap).then(|| {
        format!(
            "{side} pattern density {:.1}% exceeds the cap of {:.1}%",
            100.0 * density,
            100.0 * spec.density_cap
        )
    });
    Ok(BuiltPattern { pattern, warning })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize) -> Factor {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        Factor::Sparse(SparseMatrix::from_triplets(n, n, &t).unwrap())
    }

    fn op_of(f: Factor) -> KroneckerOperator {
        let n = f.nrows();
        KroneckerOperator::new(vec![f], vec![Factor::identity(n)]).unwrap()
    }

    #[test]
    fn power_zero_is_diagonal() {
        let op = op_of(tridiag(6));
        let spec = PatternSpec { power: 0, ..Default::default() };
        let p = build_pattern(&op, Side::Right, &spec).unwrap().pattern;
        assert_eq!(p, SparsityPattern::diagonal(6));
    }

    #[test]
    fn plain_square_of_tridiagonal_is_pentadiagonal() {
        let op = op_of(tridiag(8));
        let spec = PatternSpec {
            variant: PatternVariant::Plain,
            power: 2,
            density_cap: 1.0,
        };
        let p = build_pattern(&op, Side::Right, &spec).unwrap().pattern;
        for j in 0..8 {
            for i in 0..8 {
                assert_eq!(p.contains(i, j), i.abs_diff(j) <= 2, "({i},{j})");
            }
        }
    }

    #[test]
    fn cancellation_does_not_drop_entries() {
        // A_1 + A_2 cancels numerically, the structural sum must not
        let a = tridiag(5);
        let b = a.scale(-1.0);
        let op = KroneckerOperator::new(vec![a, b], vec![Factor::identity(3), Factor::identity(3)]).unwrap();
        let spec = PatternSpec {
            variant: PatternVariant::Plain,
            power: 1,
            density_cap: 1.0,
        };
        let p = build_pattern(&op, Side::Right, &spec).unwrap().pattern;
        assert!(p.contains(0, 1) && p.contains(1, 0));
        let left = build_pattern(&op, Side::Left, &spec).unwrap().pattern;
        assert_eq!(left, SparsityPattern::diagonal(3));
    }

    #[test]
    fn density_warning() {
        let op = op_of(tridiag(6));
        let spec = PatternSpec { power: 3, ..Default::default() };
        let built = build_pattern(&op, Side::Right, &spec).unwrap();
        assert_eq!(built.pattern, SparsityPattern::full(6));
        assert!(built.warning.unwrap().contains("exceeds"));
    }

    #[test]
    fn projection_and_conformance() {
        let p = SparsityPattern::diagonal(3);
        let d = Factor::Dense(crate::matrix::DenseMatrix::from_fn(3, 3, |i, j| (1 + i + 3 * j) as f64));
        let s = p.project(&d).unwrap();
        assert_eq!(s.nnz(), 3);
        assert_eq!(s.get(1, 1), 5.0);
        assert!(p.conforms(&Factor::Sparse(s)));
        assert!(!p.conforms(&d));
    }

    #[test]
    fn rejects_empty_columns() {
        let cols = vec![IndexSet::new(vec![0], 2).unwrap(), IndexSet::new(vec![], 2).unwrap()];
        assert!(SparsityPattern::from_columns(&cols, 2).is_err());
    }
}
