use nalgebra::linalg::{Cholesky, LU};
use nalgebra::Dyn;

use super::DenseMatrix;
use crate::error::{dim_err, Error, Result};

/// LU factorization with partial pivoting that has passed a singularity check.
pub struct DenseLu {
    lu: LU<f64, Dyn, Dyn>,
}

/// Relative pivot threshold below which a matrix is declared singular.
const PIVOT_TOL: f64 = 1e-14;

/// Factors `a`, failing when the smallest pivot is negligible relative to the
/// largest entry.
pub fn lu_factor(a: &DenseMatrix) -> Result<DenseLu> {
    if !a.is_square() {
        return Err(dim_err(format!("LU of a non-square {:?} matrix", a.shape())));
    }
    let scale = a.amax();
    let lu = LU::new(a.clone());
    let n = a.nrows();
    let u = lu.u();
    let min_pivot = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if n > 0 && (scale == 0.0 || !(min_pivot > PIVOT_TOL * scale)) {
        return Err(Error::Factorization(format!(
            "singular matrix (pivot {min_pivot:.3e}, scale {scale:.3e})"
        )));
    }
    Ok(DenseLu { lu })
}

impl DenseLu {
    /// Solves `A x = b` for a block of right-hand sides.
    pub fn solve(&self, b: &DenseMatrix) -> DenseMatrix {
        let mut x = b.clone();
        self.lu.solve_mut(&mut x);
        x
    }

    pub fn inverse(&self) -> DenseMatrix {
        self.lu.try_inverse().expect("pivots were checked at factorization")
    }
}

pub fn inverse(a: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(lu_factor(a)?.inverse())
}

/// Maximum absolute column sum.
pub fn norm1(a: &DenseMatrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// 1-norm condition number `||A||_1 ||A^-1||_1`, infinite when singular.
pub fn cond1(a: &DenseMatrix) -> f64 {
    match inverse(a) {
        Ok(inv) => norm1(a) * norm1(&inv),
        Err(_) => f64::INFINITY,
    }
}

/// How a symmetric positive semi-definite system was finally solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpdSolve {
    Cholesky,
    Ridge,
    Lu,
}

/// Solves `G x = b` for symmetric positive semi-definite `G`: Cholesky
/// first, then Cholesky of `G + ridge*I` with `ridge = 1e-12 trace(G)`, then
/// pivoted LU of the original matrix.
pub fn solve_spd_or_lu(g: &DenseMatrix, b: &DenseMatrix) -> Result<(DenseMatrix, SpdSolve)> {
    if let Some(ch) = Cholesky::new(g.clone()) {
        if cholesky_ok(&ch) {
            return Ok((ch.solve(b), SpdSolve::Cholesky));
        }
    }
    let ridge = 1e-12 * g.trace().abs();
    if ridge > 0.0 {
        let mut shifted = g.clone();
        for i in 0..g.nrows() {
            shifted[(i, i)] += ridge;
        }
        if let Some(ch) = Cholesky::new(shifted) {
            if cholesky_ok(&ch) {
                return Ok((ch.solve(b), SpdSolve::Ridge));
            }
        }
    }
    let lu = lu_factor(g)?;
    Ok((lu.solve(b), SpdSolve::Lu))
}

/// Cholesky with a pivoted-LU fallback and no regularization; fails when
/// the matrix is numerically singular.
pub fn solve_spd_then_lu(g: &DenseMatrix, b: &DenseMatrix) -> Result<(DenseMatrix, SpdSolve)> {
    if let Some(ch) = Cholesky::new(g.clone()) {
        if cholesky_ok(&ch) {
            return Ok((ch.solve(b), SpdSolve::Cholesky));
        }
    }
    let lu = lu_factor(g)?;
    Ok((lu.solve(b), SpdSolve::Lu))
}

fn cholesky_ok(ch: &Cholesky<f64, Dyn>) -> bool {
    let l = ch.l_dirty();
    let n = l.nrows();
    let diag: Vec<f64> = (0..n).map(|i| l[(i, i)]).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    // squared pivots relate to the eigenvalue spread of G
    n == 0 || (min.is_finite() && min * min > 1e-15 * max * max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_detects_singular() {
        let a = DenseMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(lu_factor(&a).is_err());
        let b = DenseMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let lu = lu_factor(&b).unwrap();
        let x = lu.solve(&DenseMatrix::identity(2, 2));
        assert!((&b * x - DenseMatrix::identity(2, 2)).norm() < 1e-15);
    }

    #[test]
    fn cond1_of_diagonal() {
        let a = DenseMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 10.0, 0.5]));
        assert!((cond1(&a) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn spd_solver_falls_back() {
        let g = DenseMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DenseMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let (x, how) = solve_spd_or_lu(&g, &b).unwrap();
        assert_eq!(how, SpdSolve::Cholesky);
        assert!((&g * x - &b).norm() < 1e-14);

        // rank-deficient PSD: ridge makes it solvable
        let g = DenseMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, how) = solve_spd_or_lu(&g, &b).unwrap();
        assert_eq!(how, SpdSolve::Ridge);
    }
}
