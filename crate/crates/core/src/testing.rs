//! Seeded random inputs shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::matrix::{DenseMatrix, Factor};
use crate::operator::KroneckerOperator;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dense(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Random matrix plus `shift * I`, well conditioned for moderate shifts.
pub fn shifted(n: usize, shift: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    dense(n, n, rng) + DenseMatrix::identity(n, n) * shift
}

pub fn operator(n: usize, m: usize, r: usize, rng: &mut ChaCha8Rng) -> KroneckerOperator {
    let a = (0..r).map(|_| Factor::Dense(dense(n, n, rng))).collect();
    let b = (0..r).map(|_| Factor::Dense(dense(m, m, rng))).collect();
    KroneckerOperator::new(a, b).unwrap()
}
