use serde_json::json;

use super::{ProblemInstance, SylvesterBaseline};
use crate::error::{dim_err, Error, Result};
use crate::matrix::{DenseMatrix, Factor, SparseMatrix};
use crate::operator::KroneckerOperator;

/// Conductance scale of the ladder.
const LADDER: f64 = 41.0;
/// Coefficient of the quadratic diode terms.
const DIODE: f64 = 800.0;

/// Second-order Carleman model of a nonlinear RC ladder with `n0` nodes:
/// `A X + X A^T + N X N^T = E` on `n = n0^2 + n0` unknowns per dimension.
#[derive(Debug, Clone)]
pub struct CircuitData {
    pub n0: usize,
    /// Linear ladder part, `n0 × n0`.
    pub a1: SparseMatrix,
    /// Quadratic part, `n0 × n0^2`; column `a·n0 + b` multiplies `v_a v_b`.
    pub a2: SparseMatrix,
    pub b: Vec<f64>,
    pub a: SparseMatrix,
    pub n_mat: SparseMatrix,
    pub e: DenseMatrix,
}

impl CircuitData {
    pub fn new(n0: usize) -> Result<Self> {
        if n0 < 2 {
            return Err(Error::Argument(format!("circuit needs n0 >= 2, got {n0}")));
        }
        let mut b = vec![0.0; n0];
        b[0] = 1.0;
        Self::from_blocks(ladder(n0)?, quadratic(n0)?, b)
    }

    /// Assembles the bilinear system from supplied blocks `A1`, `A2` and `b`.
    pub fn from_blocks(a1: SparseMatrix, a2: SparseMatrix, b: Vec<f64>) -> Result<Self> {
        let n0 = a1.rows();
        if a1.cols() != n0 || a2.rows() != n0 || a2.cols() != n0 * n0 || b.len() != n0 {
            return Err(dim_err(format!(
                "circuit blocks: A1 {}x{}, A2 {}x{}, b {}",
                a1.rows(),
                a1.cols(),
                a2.rows(),
                a2.cols(),
                b.len()
            )));
        }
        let n = n0 * n0 + n0;
        let mut ta = Vec::new();
        for (i, j, v) in a1.triplets() {
            ta.push((i, j, v));
        }
        for (i, j, v) in a2.triplets() {
            ta.push((i, n0 + j, v));
        }
        // A1 ⊗ I + I ⊗ A1
        for (i, j, v) in a1.triplets() {
            for c in 0..n0 {
                ta.push((n0 + i * n0 + c, n0 + j * n0 + c, v));
                ta.push((n0 + c * n0 + i, n0 + c * n0 + j, v));
            }
        }
        let a = SparseMatrix::from_triplets(n, n, &ta)?;

        // lower-left block b ⊗ I + I ⊗ b
        let mut tn = Vec::new();
        for (p, &bp) in b.iter().enumerate() {
            if bp == 0.0 {
                continue;
            }
            for c in 0..n0 {
                tn.push((n0 + p * n0 + c, c, bp));
                tn.push((n0 + c * n0 + p, c, bp));
            }
        }
        let n_mat = SparseMatrix::from_triplets(n, n, &tn)?;

        let mut e = DenseMatrix::zeros(n, n);
        for (i, &bi) in b.iter().enumerate() {
            for (j, &bj) in b.iter().enumerate() {
                e[(i, j)] = -bi * bj;
            }
        }
        Ok(Self {
            n0,
            a1,
            a2,
            b,
            a,
            n_mat,
            e,
        })
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    /// Operator with pairs `(I, A), (A, I), (N, N)` and the Lyapunov
    /// baseline `A X + X A^T = R`.
    pub fn into_instance(self) -> Result<ProblemInstance> {
        let n = self.n();
        let a = Factor::Sparse(self.a.clone());
        let nm = Factor::Sparse(self.n_mat.clone());
        let op = KroneckerOperator::new(
            vec![Factor::identity(n), a.clone(), nm.clone()],
            vec![a, Factor::identity(n), nm],
        )?;
        let params = json!({ "n0": self.n0, "n": n });
        let mut inst = ProblemInstance::new("circuit", op, self.e.clone(), params)?;
        let ad = self.a.to_dense();
        let adt = ad.transpose();
        inst.baseline = Some(SylvesterBaseline::new(ad, adt));
        Ok(inst)
    }
}

pub fn circuit(n0: usize) -> Result<ProblemInstance> {
    CircuitData::new(n0)?.into_instance()
}

fn ladder(n0: usize) -> Result<SparseMatrix> {
    let mut t = Vec::new();
    for k in 0..n0 {
        if k + 1 == n0 {
            t.push((k, k, -LADDER));
        } else {
            t.push((k, k, -2.0 * LADDER));
            t.push((k, k + 1, LADDER));
        }
        if k > 0 {
            t.push((k, k - 1, LADDER));
        }
    }
    SparseMatrix::from_triplets(n0, n0, &t)
}

/// Rows of the diode currents `-(v_0)^2`, `(v_{k-1} - v_k)^2 - (v_k - v_{k+1})^2`.
fn quadratic(n0: usize) -> Result<SparseMatrix> {
    let mut t = Vec::new();
    let mut square = |row: usize, a: usize, b: Option<usize>, sign: f64| {
        let col = |i: usize, j: usize| i * n0 + j;
        t.push((row, col(a, a), sign * DIODE));
        if let Some(b) = b {
            t.push((row, col(a, b), -sign * DIODE));
            t.push((row, col(b, a), -sign * DIODE));
            t.push((row, col(b, b), sign * DIODE));
        }
    };
    square(0, 0, None, -1.0);
    for k in 0..n0 {
        if k > 0 {
            square(k, k - 1, Some(k), 1.0);
        }
        if k + 1 < n0 {
            square(k, k, Some(k + 1), -1.0);
        }
    }
    SparseMatrix::from_triplets(n0, n0 * n0, &t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions() {
        let c = CircuitData::new(30).unwrap();
        assert_eq!(c.n(), 930);
        assert_eq!(c.e.shape(), (930, 930));
        assert_eq!(c.e[(0, 0)], -1.0);
        assert_eq!(c.e.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn orthogonality_is_structural() {
        for n0 in [2, 5, 30] {
            let c = CircuitData::new(n0).unwrap();
            assert_eq!(c.a.frobenius(&c.n_mat), 0.0);
            assert_eq!(c.n_mat.trace(), 0.0);
        }
    }

    #[test]
    fn ladder_rows() {
        let a1 = ladder(4).unwrap().to_dense();
        let expect = DenseMatrix::from_row_slice(
            4,
            4,
            &[-82.0, 41.0, 0.0, 0.0, 41.0, -82.0, 41.0, 0.0, 0.0, 41.0, -82.0, 41.0, 0.0, 0.0, 41.0, -41.0],
        );
        assert_eq!(a1, expect);
    }

    #[test]
    fn quadratic_part_evaluates_diode_currents() {
        let n0 = 4;
        let a2 = quadratic(n0).unwrap();
        let v = [0.3, -0.7, 1.1, 0.4];
        let vv = DenseMatrix::from_fn(n0 * n0, 1, |p, _| v[p / n0] * v[p % n0]);
        let got = a2.mul_dense(&vv);
        let sq = |x: f64| x * x;
        let expect = [
            -DIODE * sq(v[0]) - DIODE * sq(v[0] - v[1]),
            DIODE * sq(v[0] - v[1]) - DIODE * sq(v[1] - v[2]),
            DIODE * sq(v[1] - v[2]) - DIODE * sq(v[2] - v[3]),
            DIODE * sq(v[2] - v[3]),
        ];
        for k in 0..n0 {
            assert!((got[k] - expect[k]).abs() < 1e-10, "row {k}");
        }
    }

    #[test]
    fn kronecker_block_propagates_products() {
        // (A1 ⊗ I + I ⊗ A1)(v ⊗ v) = (A1 v) ⊗ v + v ⊗ (A1 v)
        let n0 = 3;
        let c = CircuitData::new(n0).unwrap();
        let v = [0.5, -1.0, 2.0];
        let mut x = DenseMatrix::zeros(c.n(), 1);
        for a in 0..n0 {
            x[a] = v[a];
            for b in 0..n0 {
                x[n0 + a * n0 + b] = v[a] * v[b];
            }
        }
        let ax = c.a.mul_dense(&x);
        let a1v = c.a1.mul_dense(&DenseMatrix::from_column_slice(n0, 1, &v));
        for a in 0..n0 {
            for b in 0..n0 {
                let expect = a1v[a] * v[b] + v[a] * a1v[b];
                assert!((ax[n0 + a * n0 + b] - expect).abs() < 1e-10);
            }
        }
        // input part: N x picks (b u) ⊗ x + x ⊗ (b u) from the linear states
        let nx = c.n_mat.mul_dense(&x);
        for a in 0..n0 {
            for b in 0..n0 {
                let expect = c.b[a] * v[b] + v[a] * c.b[b];
                assert_eq!(nx[n0 + a * n0 + b], expect);
            }
        }
    }

    #[test]
    fn baseline_solves_lyapunov_part() {
        let inst = circuit(3).unwrap();
        let base = inst.baseline.as_ref().unwrap();
        let r = DenseMatrix::from_fn(12, 12, |i, j| ((i * 5 + j * 3) % 7) as f64 - 3.0);
        let x = crate::krylov::Preconditioner::apply(base, &r).unwrap();
        let a = base.left();
        let res = a * &x + &x * a.transpose() - &r;
        assert!(res.norm() < 1e-9 * r.norm());
    }

    #[test]
    fn rejects_bad_blocks() {
        assert!(CircuitData::new(1).is_err());
        let a1 = ladder(3).unwrap();
        assert!(CircuitData::from_blocks(a1, SparseMatrix::zeros(3, 8), vec![1.0, 0.0, 0.0]).is_err());
    }
}
