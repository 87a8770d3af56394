use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::ProblemInstance;
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Factor, SparseMatrix};
use crate::operator::KroneckerOperator;

/// Reproducible random multiterm operator with banded factors of bandwidth
/// `band`. Factors are diagonally dominant; with `spd` they are also
/// symmetric, hence SPD, and so is the whole operator. The right-hand side
/// is the identity padded with zeros.
pub fn synthetic_banded(n: usize, m: usize, r: usize, band: usize, seed: u64, spd: bool) -> Result<ProblemInstance> {
    if r == 0 || n == 0 || m == 0 {
        return Err(Error::Argument(format!("synthetic problem needs n, m, r >= 1 (got {n}, {m}, {r})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut right = Vec::with_capacity(r);
    let mut left = Vec::with_capacity(r);
    for _ in 0..r {
        right.push(Factor::Sparse(banded(n, band, spd, &mut rng)?));
        left.push(Factor::Sparse(banded(m, band, spd, &mut rng)?));
    }
    let op = KroneckerOperator::new(right, left)?;
    let e = DenseMatrix::from_fn(m, n, |i, j| if i == j { 1.0 } else { 0.0 });
    let params = json!({ "n": n, "m": m, "r": r, "band": band, "seed": seed, "spd": spd });
    ProblemInstance::new("synthetic", op, e, params)
}

fn banded(n: usize, band: usize, spd: bool, rng: &mut ChaCha8Rng) -> Result<SparseMatrix> {
    let mut off = vec![0.0; n];
    let mut t = Vec::new();
    for j in 0..n {
        for i in j.saturating_sub(band)..(j + band + 1).min(n) {
            if i == j || (spd && i < j) {
                continue;
            }
            let v: f64 = rng.gen_range(-1.0..1.0);
            t.push((i, j, v));
            off[i] += v.abs();
            if spd {
                t.push((j, i, v));
                off[j] += v.abs();
            }
        }
    }
    for (i, o) in off.iter().enumerate() {
        t.push((i, i, o + rng.gen_range(0.5..1.5)));
    }
    SparseMatrix::from_triplets(n, n, &t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::bandwidth;

    #[test]
    fn band_zero_is_diagonal() {
        let p = synthetic_banded(6, 4, 3, 0, 1, false).unwrap();
        let dense = p.operator.materialize(100).unwrap();
        for i in 0..24 {
            for j in 0..24 {
                if i != j {
                    assert_eq!(dense[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = synthetic_banded(9, 7, 4, 2, 77, true).unwrap();
        let b = synthetic_banded(9, 7, 4, 2, 77, true).unwrap();
        for (x, y) in a.operator.right_factors().iter().zip(b.operator.right_factors()) {
            assert_eq!(x.to_dense(), y.to_dense());
        }
        for (x, y) in a.operator.left_factors().iter().zip(b.operator.left_factors()) {
            assert_eq!(x.to_dense(), y.to_dense());
        }
        let c = synthetic_banded(9, 7, 4, 2, 78, true).unwrap();
        assert_ne!(a.operator.right_factors()[0].to_dense(), c.operator.right_factors()[0].to_dense());
    }

    #[test]
    fn spd_factors_and_bandwidth() {
        let p = synthetic_banded(12, 10, 3, 3, 5, true).unwrap();
        for f in p.operator.right_factors().iter().chain(p.operator.left_factors()) {
            let d = f.to_dense();
            assert!(bandwidth(&d).unwrap() <= 3);
            assert_eq!(d, d.transpose());
            assert!(d.clone().cholesky().is_some());
        }
        assert_eq!(p.rhs.shape(), (10, 12));
        assert_eq!(p.rhs.sum(), 10.0);
    }
}
