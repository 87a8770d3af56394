use serde_json::json;

use super::{ProblemInstance, SylvesterBaseline};
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Factor, SparseMatrix};
use crate::operator::KroneckerOperator;

/// Finite-difference discretization of `-eps Δu + w·∇u = 0` on the unit square
/// with `w = (φ1(x)ψ1(y), φ2(x)ψ2(y))`. Rows of the unknown `X` follow `x`,
/// columns follow `y`; `n` interior nodes per direction, `h = 1/(n+1)`.
#[derive(Debug, Clone)]
pub struct ConvDiffData {
    pub n: usize,
    pub epsilon: f64,
    pub h: f64,
    /// `eps/h^2 · tridiag(-1, 2, -1)`.
    pub t: SparseMatrix,
    /// `1/(2h) · tridiag(-1, 0, 1)`.
    pub b: SparseMatrix,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub psi1: Vec<f64>,
    pub psi2: Vec<f64>,
    pub f: DenseMatrix,
    pub psibar1: f64,
    pub phibar2: f64,
}

pub fn phi1(x: f64) -> f64 {
    1.0 - (2.0 * x + 1.0).powi(2)
}

pub fn psi1(y: f64) -> f64 {
    y
}

pub fn phi2(x: f64) -> f64 {
    -2.0 * (2.0 * x + 1.0)
}

pub fn psi2(y: f64) -> f64 {
    1.0 - y * y
}

/// Dirichlet profile on the edge `y = 0`.
pub fn bottom_profile(x: f64) -> f64 {
    if x <= 0.5 {
        1.0 + (10.0 + 20.0 * (2.0 * x - 1.0)).tanh()
    } else {
        2.0
    }
}

impl ConvDiffData {
    pub fn new(n: usize, epsilon: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::Argument(format!("convection-diffusion needs n >= 3, got {n}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
        }
        let h = 1.0 / (n as f64 + 1.0);
        let d = epsilon / (h * h);
        let c = 1.0 / (2.0 * h);
        let mut tt = Vec::with_capacity(3 * n);
        let mut tb = Vec::with_capacity(2 * n);
        for i in 0..n {
            tt.push((i, i, 2.0 * d));
            if i + 1 < n {
                tt.push((i, i + 1, -d));
                tt.push((i + 1, i, -d));
                tb.push((i, i + 1, c));
                tb.push((i + 1, i, -c));
            }
        }
        let nodes: Vec<f64> = (1..=n).map(|i| i as f64 * h).collect();
        let phi1: Vec<f64> = nodes.iter().map(|&x| phi1(x)).collect();
        let phi2: Vec<f64> = nodes.iter().map(|&x| phi2(x)).collect();
        let psi1: Vec<f64> = nodes.iter().map(|&y| psi1(y)).collect();
        let psi2: Vec<f64> = nodes.iter().map(|&y| psi2(y)).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mut data = Self {
            n,
            epsilon,
            h,
            t: SparseMatrix::from_triplets(n, n, &tt)?,
            b: SparseMatrix::from_triplets(n, n, &tb)?,
            psibar1: mean(&psi1),
            phibar2: mean(&phi2),
            phi1,
            phi2,
            psi1,
            psi2,
            f: DenseMatrix::zeros(n, n),
        };
        data.f = data.rhs_for(&DenseMatrix::zeros(n, n), bottom_profile);
        Ok(data)
    }

    /// Grid coordinate of interior node `i` (0-based) in either direction.
    pub fn node(&self, i: usize) -> f64 {
        (i as f64 + 1.0) * self.h
    }

    /// Right-hand side for source samples `source[i, j] = f(x_i, y_j)` and
    /// Dirichlet data `g` on `y = 0` (zero on the other edges).
    pub fn rhs_for(&self, source: &DenseMatrix, g: impl Fn(f64) -> f64) -> DenseMatrix {
        let mut f = source.clone();
        let d = self.epsilon / (self.h * self.h);
        let c = 1.0 / (2.0 * self.h);
        for i in 0..self.n {
            let gi = g(self.node(i));
            // neighbours at y = 0 of the diffusion and y-convection stencils
            f[(i, 0)] += d * gi + self.phi2[i] * self.psi2[0] * c * gi;
        }
        f
    }

    fn scaled_rows(diag: &[f64], m: &SparseMatrix) -> SparseMatrix {
        let trip: Vec<_> = m.triplets().map(|(i, j, v)| (i, j, diag[i] * v)).collect();
        SparseMatrix::from_triplets(m.rows(), m.cols(), &trip).expect("same shape")
    }

    /// `Φ1 B`.
    pub fn phi1_b(&self) -> SparseMatrix {
        Self::scaled_rows(&self.phi1, &self.b)
    }

    /// `Ψ2 B`.
    pub fn psi2_b(&self) -> SparseMatrix {
        Self::scaled_rows(&self.psi2, &self.b)
    }

    /// `T X + X T^T + (Φ1 B) X Ψ1 + Φ2 X (B^T Ψ2) = F` in the `B_k X A_k^T`
    /// convention: right factors `{I, T, Ψ1, Ψ2 B}`, left `{T, I, Φ1 B, Φ2}`.
    pub fn operator(&self) -> Result<KroneckerOperator> {
        let n = self.n;
        let t = Factor::Sparse(self.t.clone());
        KroneckerOperator::new(
            vec![
                Factor::identity(n),
                t.clone(),
                Factor::Sparse(SparseMatrix::from_diagonal(&self.psi1)),
                Factor::Sparse(self.psi2_b()),
            ],
            vec![
                t,
                Factor::identity(n),
                Factor::Sparse(self.phi1_b()),
                Factor::Sparse(SparseMatrix::from_diagonal(&self.phi2)),
            ],
        )
    }

    /// `(T + ψ̄1 Φ1 B) X + X (T + φ̄2 Ψ2 B)^T = R`.
    pub fn baseline(&self) -> Result<SylvesterBaseline> {
        let l = SparseMatrix::linear_combination(&[1.0, self.psibar1], &[&self.t, &self.phi1_b()])?;
        let r = SparseMatrix::linear_combination(&[1.0, self.phibar2], &[&self.t, &self.psi2_b()])?;
        Ok(SylvesterBaseline::new(l.to_dense(), r.to_dense().transpose()))
    }

    pub fn into_instance(self) -> Result<ProblemInstance> {
        let op = self.operator()?;
        let params = json!({
            "n": self.n,
            "epsilon": self.epsilon,
            "h": self.h,
            "psibar1": self.psibar1,
            "phibar2": self.phibar2,
        });
        let baseline = self.baseline()?;
        let mut inst = ProblemInstance::new("convdiff", op, self.f, params)?;
        inst.baseline = Some(baseline);
        Ok(inst)
    }
}

pub fn convection_diffusion(n: usize, epsilon: f64) -> Result<ProblemInstance> {
    ConvDiffData::new(n, epsilon)?.into_instance()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::Preconditioner;

    #[test]
    fn diffusion_stencil() {
        let c = ConvDiffData::new(9, 0.1).unwrap();
        let d = 0.1 / (c.h * c.h);
        let t = c.t.to_dense();
        assert!((t[(4, 3)] + d).abs() < 1e-9 && (t[(4, 4)] - 2.0 * d).abs() < 1e-9 && (t[(4, 5)] + d).abs() < 1e-9);
        let b = c.b.to_dense();
        assert_eq!(b[(4, 5)], 1.0 / (2.0 * c.h));
        assert_eq!(b[(4, 3)], -1.0 / (2.0 * c.h));
        assert_eq!(b[(4, 4)], 0.0);
    }

    #[test]
    fn split_reproduces_convection_field() {
        let c = ConvDiffData::new(50, 0.1).unwrap();
        for i in 0..c.n {
            for j in 0..c.n {
                let (x, y) = (c.node(i), c.node(j));
                let w1 = y * (1.0 - (2.0 * x + 1.0).powi(2));
                let w2 = -2.0 * (2.0 * x + 1.0) * (1.0 - y * y);
                assert!((c.phi1[i] * c.psi1[j] - w1).abs() <= 1e-14);
                assert!((c.phi2[i] * c.psi2[j] - w2).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn homogeneous_problem() {
        let c = ConvDiffData::new(7, 0.05).unwrap();
        let f = c.rhs_for(&DenseMatrix::zeros(7, 7), |_| 0.0);
        assert_eq!(f, DenseMatrix::zeros(7, 7));
        let op = c.operator().unwrap();
        assert_eq!(op.apply(&DenseMatrix::zeros(7, 7)).unwrap(), DenseMatrix::zeros(7, 7));
    }

    #[test]
    fn quadratic_solution_is_reproduced() {
        // u = x(1-x)(1-y) vanishes on x = 0, x = 1, y = 1 and is resolved
        // exactly by centered differences
        let eps = 0.07;
        let c = ConvDiffData::new(20, eps).unwrap();
        let u = |x: f64, y: f64| x * (1.0 - x) * (1.0 - y);
        let n = c.n;
        let x = DenseMatrix::from_fn(n, n, |i, j| u(c.node(i), c.node(j)));
        let source = DenseMatrix::from_fn(n, n, |i, j| {
            let (xx, yy) = (c.node(i), c.node(j));
            let lap = -2.0 * (1.0 - yy);
            let ux = (1.0 - 2.0 * xx) * (1.0 - yy);
            let uy = -xx * (1.0 - xx);
            -eps * lap + phi1(xx) * psi1(yy) * ux + phi2(xx) * psi2(yy) * uy
        });
        let f = c.rhs_for(&source, |xx| xx * (1.0 - xx));
        let res = c.operator().unwrap().apply(&x).unwrap() - &f;
        assert!(res.amax() <= 1e-10, "{}", res.amax());
    }

    #[test]
    fn boundary_enters_first_column_only() {
        let c = ConvDiffData::new(10, 0.1).unwrap();
        for j in 1..10 {
            assert!(c.f.column(j).iter().all(|v| *v == 0.0));
        }
        assert!(c.f.column(0).iter().all(|v| *v != 0.0));
        assert!((bottom_profile(0.75) - 2.0).abs() == 0.0);
        assert!(bottom_profile(0.0) < 1e-8);
    }

    #[test]
    fn baseline_inverts_averaged_operator() {
        let c = ConvDiffData::new(12, 0.1).unwrap();
        let base = c.baseline().unwrap();
        let r = DenseMatrix::from_fn(12, 12, |i, j| (i as f64 - j as f64).sin());
        let x = base.apply(&r).unwrap();
        let res = base.left() * &x + &x * base.right() - &r;
        assert!(res.norm() < 1e-9 * r.norm());
        let l = base.left();
        let expected = c.t.to_dense() + c.phi1_b().to_dense() * c.psibar1;
        assert!((l - expected).amax() < 1e-12);
    }
}
