//! Dense and sparse matrix values and the elementary kernels every other
//! module builds on.
//!
//! Dense matrices are nalgebra's column-major `DMatrix<f64>`, so `vec(X)` is
//! the underlying storage slice. Sparse matrices are compressed by column.

mod dense;
mod factor;
pub mod market;
mod schur;
mod sparse;

pub use dense::{cond1, inverse, lu_factor, norm1, solve_spd_or_lu, solve_spd_then_lu, DenseLu, SpdSolve};
pub use factor::Factor;
pub use schur::{real_schur, RealSchur};
pub use sparse::SparseMatrix;

use crate::error::{dim_err, Error, Result};

/// Column-major dense matrix.
pub type DenseMatrix = nalgebra::DMatrix<f64>;

/// Frobenius inner product `sum_ij a_ij * b_ij`.
pub fn frobenius_inner(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(dim_err(format!(
            "frobenius_inner of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(dot(a.as_slice(), b.as_slice()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Column stacking of `x`. Storage is column-major, so this is a view.
/// `y += alpha * x` for same-shape matrices.
pub fn axpy(y: &mut DenseMatrix, alpha: f64, x: &DenseMatrix) {
    debug_assert_eq!(y.shape(), x.shape());
    for (a, b) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *a += alpha * b;
    }
}

pub fn vectorize(x: &DenseMatrix) -> &[f64] {
    x.as_slice()
}

/// Inverse of [`vectorize`]: reshape a length `rows*cols` vector column by column.
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Result<DenseMatrix> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Capacity(format!("{rows}x{cols} overflows")))?;
    if v.len() != len {
        return Err(dim_err(format!(
            "cannot reshape a vector of length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DenseMatrix::from_column_slice(rows, cols, v))
}

/// Types whose band structure can be read off their stored entries.
pub trait Banded {
    fn shape(&self) -> (usize, usize);

    /// Smallest `b` with `a_ij = 0` whenever `|i - j| > b`. Works for
    /// rectangular matrices; an all-zero matrix has extent 0.
    fn band_extent(&self) -> usize;
}

impl Banded for DenseMatrix {
    fn shape(&self) -> (usize, usize) {
        DenseMatrix::shape(self)
    }

    fn band_extent(&self) -> usize {
        let mut band = 0;
        for j in 0..self.ncols() {
            for (i, &v) in self.column(j).iter().enumerate() {
                // exact-zero test: the band is a structural property
                if v != 0.0 {
                    band = band.max(i.abs_diff(j));
                }
            }
        }
        band
    }
}

/// Bandwidth of a square matrix. Dense input uses exact zero tests, sparse
/// input its stored entries.
pub fn bandwidth<M: Banded + ?Sized>(a: &M) -> Result<usize> {
    let (r, c) = a.shape();
    if r != c {
        return Err(dim_err(format!("bandwidth of a non-square {r}x{c} matrix")));
    }
    Ok(a.band_extent())
}

/// Sorted set of distinct 0-based positions below a dimension bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    indices: Vec<usize>,
}

impl IndexSet {
    pub fn new(indices: Vec<usize>, dim: usize) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument("index set must be sorted and unique".into()));
        }
        if let Some(&last) = indices.last() {
            if last >= dim {
                return Err(Error::Argument(format!(
                    "index {last} out of bounds for dimension {dim}"
                )));
            }
        }
        Ok(Self { indices })
    }

    /// Builds from arbitrary positions, sorting and removing duplicates.
    pub fn from_unsorted(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        Self::new(indices, dim)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / (1u64 << 53) as f64 - 0.5
        }
    }

    #[test]
    fn frobenius_identity_and_zero() {
        let i3 = DenseMatrix::identity(3, 3);
        assert_eq!(frobenius_inner(&i3, &i3).unwrap(), 3.0);
        let a = DenseMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        assert_eq!(frobenius_inner(&a, &DenseMatrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn frobenius_matches_double_loop() {
        let mut rng = lcg(7);
        let a = DenseMatrix::from_fn(4, 4, |_, _| rng());
        let b = DenseMatrix::from_fn(4, 4, |_, _| rng());
        let mut oracle = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                oracle += a[(i, j)] * b[(i, j)];
            }
        }
        let got = frobenius_inner(&a, &b).unwrap();
        assert!((got - oracle).abs() <= 1e-14 * oracle.abs().max(1e-300));
        assert_eq!(got, frobenius_inner(&b, &a).unwrap());
    }

    #[test]
    fn frobenius_shape_mismatch() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(3, 2);
        assert!(matches!(frobenius_inner(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn vec_is_column_major() {
        let x = DenseMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vectorize(&x), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn vec_unvec_round_trip_and_unit_position() {
        let mut rng = lcg(3);
        let x = DenseMatrix::from_fn(5, 7, |_, _| rng());
        assert_eq!(unvec(vectorize(&x), 5, 7).unwrap(), x);

        let (m, n) = (4, 3);
        for i in 0..m {
            for j in 0..n {
                let mut e = DenseMatrix::zeros(m, n);
                e[(i, j)] = 1.0;
                let v = vectorize(&e);
                // index oracle: 1-based position (j-1)m+i, here 0-based j*m+i
                let pos = j * m + i;
                for (k, &val) in v.iter().enumerate() {
                    assert_eq!(val, if k == pos { 1.0 } else { 0.0 });
                }
            }
        }
        assert!(unvec(&[1.0, 2.0, 3.0], 2, 2).is_err());
    }

    #[test]
    fn bandwidth_cases() {
        let d = DenseMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_eq!(bandwidth(&d).unwrap(), 0);
        let t = DenseMatrix::from_fn(5, 5, |i, j| if i.abs_diff(j) <= 1 { 1.0 } else { 0.0 });
        assert_eq!(bandwidth(&t).unwrap(), 1);
        let mut rng = lcg(11);
        let f = DenseMatrix::from_fn(4, 4, |_, _| rng() + 2.0);
        // scan-all-entries oracle
        let mut oracle = 0;
        for i in 0..4 {
            for j in 0..4 {
                if f[(i, j)] != 0.0 {
                    oracle = oracle.max(i.abs_diff(j));
                }
            }
        }
        assert_eq!(oracle, 3);
        assert_eq!(bandwidth(&f).unwrap(), oracle);
        assert!(bandwidth(&DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn index_set_validation() {
        assert!(IndexSet::new(vec![0, 2, 5], 6).is_ok());
        assert!(IndexSet::new(vec![0, 2, 2], 6).is_err());
        assert!(IndexSet::new(vec![3, 1], 6).is_err());
        assert!(IndexSet::new(vec![6], 6).is_err());
        let s = IndexSet::from_unsorted(vec![4, 1, 4, 0], 5).unwrap();
        assert_eq!(s.as_slice(), &[0, 1, 4]);
        assert!(s.contains(4) && !s.contains(2));
    }
}
