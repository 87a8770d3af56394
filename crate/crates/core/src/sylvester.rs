//! Direct solvers for the one- and two-term equations that arise when an NKP
//! approximation of rank 1 or 2 is used as a preconditioner.
//!
//! * `B X A^T = E` — two LU solves.
//! * `A X + X B = C` — Bartels–Stewart with real Schur forms of `A` and `B`.
//! * `Z1 X Y1^T + Z2 X Y2^T = R` — reduced to the standard form by inverting
//!   one coefficient on each side.
//!
//! All factorizations are kept in reusable objects so that repeated
//! right-hand sides (one per Krylov iteration) only pay for the solves.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use crate::error::{Error, Result, Side};
use crate::krylov::{PrecondKind, Preconditioner};
use crate::matrix::{cond1, inverse, lu_factor, real_schur, DenseLu, DenseMatrix, Factor, RealSchur};
use crate::nkp::KronApprox;

/// Pivots of the small block systems below this multiple of the coefficient
/// scale signal overlapping spectra.
const CLASH_TOL: f64 = 1e-13;

/// Largest acceptable condition-number product in the two-sided reduction.
const REDUCTION_COND_LIMIT: f64 = 1e12;

/// Solves `B X A^T = E` as `X = B^{-1} E A^{-T}`.
pub fn solve_one_term(a: &DenseMatrix, b: &DenseMatrix, e: &DenseMatrix) -> Result<DenseMatrix> {
    OneTerm::new(a, b)?.solve(e)
}

/// Cached LU factors for `B X A^T = E`.
pub struct OneTerm {
    lu_a: DenseLu,
    lu_b: DenseLu,
}

impl OneTerm {
    pub fn new(a: &DenseMatrix, b: &DenseMatrix) -> Result<Self> {
        let lu_a = lu_factor(a).map_err(|e| singular(e, Side::Right))?;
        let lu_b = lu_factor(b).map_err(|e| singular(e, Side::Left))?;
        Ok(Self { lu_a, lu_b })
    }

    pub fn solve(&self, e: &DenseMatrix) -> Result<DenseMatrix> {
        let y = self.lu_b.solve(e);
        // X A^T = Y  <=>  A X^T = Y^T
        Ok(self.lu_a.solve(&y.transpose()).transpose())
    }
}

fn singular(e: Error, side: Side) -> Error {
    match e {
        Error::Factorization(_) => Error::SingularCoefficient { side },
        other => other,
    }
}

/// Solves `A X + X B = C` with `A` m×m and `B` n×n.
pub fn solve_standard(a: &DenseMatrix, b: &DenseMatrix, c: &DenseMatrix) -> Result<DenseMatrix> {
    StandardSylvester::new(a, b)?.solve(c)
}

/// Real Schur forms `A = Q_A S Q_A^T`, `B = Q_B T Q_B^T`, reusable across
/// right-hand sides.
pub struct StandardSylvester {
    left: RealSchur,
    right: RealSchur,
    scale: f64,
}

impl StandardSylvester {
    pub fn new(a: &DenseMatrix, b: &DenseMatrix) -> Result<Self> {
        let left = real_schur(a)?;
        let right = real_schur(b)?;
        let scale = left.t.amax() + right.t.amax();
        Ok(Self { left, right, scale })
    }

    pub fn left_schur(&self) -> &RealSchur {
        &self.left
    }

    pub fn right_schur(&self) -> &RealSchur {
        &self.right
    }

    pub fn solve(&self, c: &DenseMatrix) -> Result<DenseMatrix> {
        let (m, n) = (self.left.dim(), self.right.dim());
        if c.shape() != (m, n) {
            return Err(crate::error::dim_err(format!(
                "right-hand side is {:?}, expected {m}x{n}",
                c.shape()
            )));
        }
        let f = self.left.q.tr_mul(c) * &self.right.q;
        let y = self.solve_triangular(f)?;
        Ok(&self.left.q * y * self.right.q.transpose())
    }

    /// Solves `S Y + Y T = F` column block by column block of `T`, each
    /// block by back substitution over the diagonal blocks of `S`.
    fn solve_triangular(&self, f: DenseMatrix) -> Result<DenseMatrix> {
        let s = &self.left.t;
        let t = &self.right.t;
        let m = s.nrows();
        let mut y = f;
        let mut rhs = DenseMatrix::zeros(m, 2);
        for &j in &self.right.blocks {
            let qj = self.right.block_size(j);
            // rhs = F(:, j-block) - Y(:, 0..j) T(0..j, j-block); columns
            // before j already hold the solution
            let mut r = rhs.columns_mut(0, qj);
            r.copy_from(&y.columns(j, qj));
            if j > 0 {
                r.gemm(-1.0, &y.columns(0, j), &t.view((0, j), (j, qj)), 1.0);
            }
            for &i in self.left.blocks.iter().rev() {
                let pi = self.left.block_size(i);
                let mut kmat = [[0.0; 4]; 4];
                let mut b = [0.0; 4];
                let dim = pi * qj;
                // (I ⊗ S_ii + T_jj^T ⊗ I) vec(Y_ij) = vec(R_i)
                for c in 0..qj {
                    for a in 0..pi {
                        let row = c * pi + a;
                        b[row] = r[(i + a, c)];
                        for c2 in 0..qj {
                            for a2 in 0..pi {
                                let col = c2 * pi + a2;
                                let mut v = 0.0;
                                if c == c2 {
                                    v += s[(i + a, i + a2)];
                                }
                                if a == a2 {
                                    v += t[(j + c2, j + c)];
                                }
                                kmat[row][col] = v;
                            }
                        }
                    }
                }
                solve_small(&mut kmat, &mut b, dim, CLASH_TOL * self.scale).ok_or_else(|| {
                    Error::NoUniqueSolution(format!(
                        "eigenvalues of A and -B (nearly) coincide at blocks {i}, {j}"
                    ))
                })?;
                for c in 0..qj {
                    for a in 0..pi {
                        let v = b[c * pi + a];
                        y[(i + a, j + c)] = v;
                        // propagate into rows above
                        for row in 0..i {
                            r[(row, c)] -= v * s[(row, i + a)];
                        }
                    }
                }
            }
        }
        Ok(y)
    }
}

/// Gaussian elimination with partial pivoting on a system of size <= 4;
/// `None` when a pivot falls below `tol`.
fn solve_small(k: &mut [[f64; 4]; 4], b: &mut [f64; 4], n: usize, tol: f64) -> Option<()> {
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| k[x][col].abs().total_cmp(&k[y][col].abs()))?;
        if !(k[piv][col].abs() > tol) {
            return None;
        }
        k.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = k[row][col] / k[col][col];
            for c in col..n {
                k[row][c] -= f * k[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    for row in (0..n).rev() {
        let mut v = b[row];
        for c in row + 1..n {
            v -= k[row][c] * b[c];
        }
        b[row] = v / k[row][row];
    }
    Some(())
}

/// Solves `Z1 X Y1^T + Z2 X Y2^T = R`.
pub fn solve_two_sided(
    z1: &DenseMatrix,
    z2: &DenseMatrix,
    y1: &DenseMatrix,
    y2: &DenseMatrix,
    r: &DenseMatrix,
) -> Result<DenseMatrix> {
    TwoSided::new(z1, z2, y1, y2)?.solve(r)
}

/// Reduction of the two-sided equation to `Ã X + X B̃ = C̃` with
/// `Ã = Z_b^{-1} Z_a`, `B̃ = (Y_a^{-1} Y_b)^T`, `C̃ = Z_b^{-1} R Y_a^{-T}`,
/// where `(a, b)` is `(1, 2)` or `(2, 1)`, whichever inverts the better
/// conditioned pair.
pub struct TwoSided {
    z_inv: DenseMatrix,
    y_inv_t: DenseMatrix,
    standard: StandardSylvester,
    swapped: bool,
}

impl TwoSided {
    pub fn new(z1: &DenseMatrix, z2: &DenseMatrix, y1: &DenseMatrix, y2: &DenseMatrix) -> Result<Self> {
        let plain = cond1(z2) * cond1(y1);
        let swapped_est = cond1(z1) * cond1(y2);
        let swapped = swapped_est < plain;
        let estimate = plain.min(swapped_est);
        if !(estimate <= REDUCTION_COND_LIMIT) {
            return Err(Error::ReductionConditioning { estimate });
        }
        let (za, zb, ya, yb) = if swapped { (z2, z1, y2, y1) } else { (z1, z2, y1, y2) };
        let z_inv = inverse(zb).map_err(|e| singular(e, Side::Left))?;
        let y_inv = inverse(ya).map_err(|e| singular(e, Side::Right))?;
        let a_tilde = &z_inv * za;
        let b_tilde = (&y_inv * yb).transpose();
        let standard = StandardSylvester::new(&a_tilde, &b_tilde)?;
        Ok(Self {
            z_inv,
            y_inv_t: y_inv.transpose(),
            standard,
            swapped,
        })
    }

    /// Whether the roles of the two terms were exchanged for conditioning.
    pub fn swapped(&self) -> bool {
        self.swapped
    }

    pub fn solve(&self, r: &DenseMatrix) -> Result<DenseMatrix> {
        self.standard.solve(&(&self.z_inv * r * &self.y_inv_t))
    }
}

enum NkpSolver {
    One(OneTerm),
    Two(Box<TwoSided>),
}

/// Applies `(sum_s Y_s ⊗ Z_s)^{-1}` for `q ∈ {1, 2}`, factorizing on first
/// use and reusing the factorization afterwards.
pub struct NkpPreconditioner {
    ys: Vec<DenseMatrix>,
    zs: Vec<DenseMatrix>,
    solver: OnceLock<Result<NkpSolver>>,
    factorizations: AtomicUsize,
}

impl NkpPreconditioner {
    pub fn new(approx: &KronApprox) -> Result<Self> {
        Self::from_factors(&approx.ys, &approx.zs)
    }

    pub fn from_factors(ys: &[Factor], zs: &[Factor]) -> Result<Self> {
        let q = ys.len();
        if q == 0 || q > 2 || zs.len() != q {
            return Err(Error::UnsupportedRank(q));
        }
        Ok(Self {
            ys: ys.iter().map(Factor::to_dense).collect(),
            zs: zs.iter().map(Factor::to_dense).collect(),
            solver: OnceLock::new(),
            factorizations: AtomicUsize::new(0),
        })
    }

    pub fn q(&self) -> usize {
        self.ys.len()
    }

    /// Number of times the factorization has been computed (0 or 1).
    pub fn factorizations(&self) -> usize {
        self.factorizations.load(Ordering::Relaxed)
    }

    /// Computes the factorization now instead of at the first application.
    pub fn factorize(&self) -> Result<()> {
        match self.solver() {
            Ok(_) => Ok(()),
            Err(e) => Err(clone_err(e)),
        }
    }

    fn solver(&self) -> &Result<NkpSolver> {
        self.solver.get_or_init(|| {
            self.factorizations.fetch_add(1, Ordering::Relaxed);
            if self.q() == 1 {
                OneTerm::new(&self.ys[0], &self.zs[0]).map(NkpSolver::One)
            } else {
                TwoSided::new(&self.zs[0], &self.zs[1], &self.ys[0], &self.ys[1])
                    .map(|t| NkpSolver::Two(Box::new(t)))
            }
        })
    }

    pub fn solve(&self, r: &DenseMatrix) -> Result<DenseMatrix> {
        match self.solver() {
            Ok(NkpSolver::One(s)) => s.solve(r),
            Ok(NkpSolver::Two(s)) => s.solve(r),
            Err(e) => Err(clone_err(e)),
        }
    }
}

/// Cached factorization failures are reported again on every call.
fn clone_err(e: &Error) -> Error {
    match e {
        Error::SingularCoefficient { side } => Error::SingularCoefficient { side: *side },
        Error::ReductionConditioning { estimate } => Error::ReductionConditioning { estimate: *estimate },
        Error::NoUniqueSolution(s) => Error::NoUniqueSolution(s.clone()),
        other => Error::Factorization(other.to_string()),
    }
}

impl Preconditioner for NkpPreconditioner {
    fn apply(&self, r: &DenseMatrix) -> Result<DenseMatrix> {
        self.solve(r)
    }

    fn kind(&self) -> PrecondKind {
        PrecondKind::Nkp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(rows: usize, cols: usize, seed: f64) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |i, j| ((i * 31 + j * 17) as f64 * 0.29 + seed).sin())
    }

    fn shifted(n: usize, seed: f64, shift: f64) -> DenseMatrix {
        pseudo(n, n, seed) + DenseMatrix::identity(n, n) * shift
    }

    #[test]
    fn one_term_scaling() {
        let e = pseudo(3, 4, 0.0);
        let a = DenseMatrix::identity(4, 4) * 2.0;
        let b = DenseMatrix::identity(3, 3);
        let x = solve_one_term(&a, &b, &e).unwrap();
        assert!((x - &e / 2.0).norm() < 1e-15);
    }

    #[test]
    fn one_term_singular_side() {
        let e = pseudo(2, 2, 0.0);
        let a = DenseMatrix::identity(2, 2);
        let b = DenseMatrix::zeros(2, 2);
        assert!(matches!(
            solve_one_term(&a, &b, &e),
            Err(Error::SingularCoefficient { side: Side::Left })
        ));
    }

    #[test]
    fn standard_diagonal_closed_form() {
        let a = DenseMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0]));
        let b = DenseMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 4.0]));
        let c = DenseMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let x = solve_standard(&a, &b, &c).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((x[(i, j)] - c[(i, j)] / (a[(i, i)] + b[(j, j)])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn standard_with_complex_blocks() {
        // rotations produce 2x2 Schur blocks on both sides
        let a = shifted(7, 0.3, 0.0) + DenseMatrix::from_fn(7, 7, |i, j| (i as f64 - j as f64) * 0.8);
        let b = shifted(5, 1.1, 6.0) + DenseMatrix::from_fn(5, 5, |i, j| (j as f64 - i as f64) * 0.5);
        let c = pseudo(7, 5, 2.0);
        let s = StandardSylvester::new(&a, &b).unwrap();
        assert!(s.left_schur().blocks.len() < 7 || s.right_schur().blocks.len() < 5);
        let x = s.solve(&c).unwrap();
        let res = (&a * &x + &x * &b - &c).norm();
        assert!(res <= 1e-10 * (a.norm() + b.norm()) * x.norm(), "residual {res}");
    }

    #[test]
    fn standard_detects_clash() {
        let a = DenseMatrix::identity(2, 2);
        let b = -DenseMatrix::identity(2, 2);
        assert!(matches!(
            solve_standard(&a, &b, &DenseMatrix::identity(2, 2)),
            Err(Error::NoUniqueSolution(_))
        ));
    }

    #[test]
    fn two_sided_doubled_identity() {
        let i3 = DenseMatrix::identity(3, 3);
        let i2 = DenseMatrix::identity(2, 2);
        let r = pseudo(3, 2, 0.5);
        let x = solve_two_sided(&i3, &i3, &i2, &i2, &r).unwrap();
        assert!((x - &r / 2.0).norm() < 1e-14);
    }

    #[test]
    fn two_sided_residual() {
        let z1 = shifted(6, 0.1, 3.0);
        let z2 = shifted(6, 0.7, 4.0);
        let y1 = shifted(4, 1.3, 3.5);
        let y2 = shifted(4, 2.9, -0.5);
        let r = pseudo(6, 4, 0.9);
        let x = solve_two_sided(&z1, &z2, &y1, &y2, &r).unwrap();
        let res = &z1 * &x * y1.transpose() + &z2 * &x * y2.transpose() - &r;
        assert!(res.norm() <= 1e-9 * r.norm());
    }

    #[test]
    fn factorization_is_reused() {
        let ys = vec![Factor::Dense(shifted(4, 0.2, 3.0)), Factor::Dense(shifted(4, 0.4, 2.0))];
        let zs = vec![Factor::Dense(shifted(3, 0.6, 3.0)), Factor::Dense(shifted(3, 0.8, 4.0))];
        let p = NkpPreconditioner::from_factors(&ys, &zs).unwrap();
        assert_eq!(p.factorizations(), 0);
        p.solve(&pseudo(3, 4, 0.0)).unwrap();
        p.solve(&pseudo(3, 4, 1.0)).unwrap();
        assert_eq!(p.factorizations(), 1);
    }

    #[test]
    fn rank_three_is_unsupported() {
        let f = vec![Factor::identity(2); 3];
        assert!(matches!(NkpPreconditioner::from_factors(&f, &f), Err(Error::UnsupportedRank(3))));
    }
}
