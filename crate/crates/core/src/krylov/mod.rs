//! Global (matrix-oriented) Krylov solvers for `M(X) = E`.
//!
//! Both solvers work directly on m×n matrices: inner products are Frobenius
//! products and the operator is applied as `sum_k B_k X A_k^T`. They are
//! mathematically identical to GMRES / Bi-CGSTAB on `vec(X)`. Preconditioning
//! is always from the right, so every recorded residual is the residual of
//! the original equation.

mod audit;
mod bicgstab;
mod gmres;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use audit::{bandwidth_audit, operator_bandwidth, AuditReport, AuditRow};
pub(crate) use audit::pair_bandwidth;
pub use bicgstab::bicgstab;
pub use gmres::gmres;

use crate::error::Result;
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecondKind {
    None,
    Nkp,
    Kinv,
    Custom,
}

/// A linear map `R -> P(R)` approximating the inverse of the operator.
pub trait Preconditioner: Sync {
    fn apply(&self, r: &DenseMatrix) -> Result<DenseMatrix>;

    fn kind(&self) -> PrecondKind;

    /// Bandwidth `max_s (beta(C_s) + beta(D_s))` for banded preconditioners
    /// with the structure `sum_s D_s R C_s^T`; `None` when unknown or dense.
    fn bandwidth(&self) -> Option<usize> {
        None
    }
}

/// `P(R) = R`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(r.clone())
    }

    fn kind(&self) -> PrecondKind {
        PrecondKind::None
    }

    fn bandwidth(&self) -> Option<usize> {
        Some(0)
    }
}

/// Wraps a closure as a preconditioner.
pub struct CustomPreconditioner<F> {
    f: F,
    bandwidth: Option<usize>,
}

impl<F> CustomPreconditioner<F>
where
    F: Fn(&DenseMatrix) -> Result<DenseMatrix> + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f, bandwidth: None }
    }

    pub fn with_bandwidth(mut self, bandwidth: usize) -> Self {
        self.bandwidth = Some(bandwidth);
        self
    }
}

impl<F> Preconditioner for CustomPreconditioner<F>
where
    F: Fn(&DenseMatrix) -> Result<DenseMatrix> + Sync,
{
    fn apply(&self, r: &DenseMatrix) -> Result<DenseMatrix> {
        (self.f)(r)
    }

    fn kind(&self) -> PrecondKind {
        PrecondKind::Custom
    }

    fn bandwidth(&self) -> Option<usize> {
        self.bandwidth
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Relative tolerance on `||E - M(X)||_F / ||E||_F`.
    pub tol: f64,
    /// GMRES restart length.
    pub restart: usize,
    /// Iteration budget (GMRES: inner iterations over all cycles;
    /// Bi-CGSTAB: full iterations).
    pub max_iter: usize,
    /// Record `bandwidth(X_j)` for every iterate.
    pub record_bandwidth: bool,
    /// Keep a copy of every iterate (small problems only).
    pub record_iterates: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            restart: 50,
            max_iter: 1000,
            record_bandwidth: false,
            record_iterates: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ConvergenceHistory {
    /// Relative residual of `X_j`, `j = 0..=iterations`; entry 0 is the
    /// residual of `X_0 = 0`, i.e. 1.
    pub residuals: Vec<f64>,
    /// Seconds since the start of the solve at which each entry was recorded.
    pub wall_times: Vec<f64>,
    pub bandwidths: Option<Vec<usize>>,
    /// Bi-CGSTAB only: residual after each half-step (`s` vectors), one per
    /// full iteration.
    pub half_residuals: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the iteration stopped on a breakdown.
    pub breakdown: Option<String>,
}

impl ConvergenceHistory {
    pub(crate) fn new(record_bandwidth: bool) -> Self {
        Self {
            bandwidths: record_bandwidth.then(Vec::new),
            ..Self::default()
        }
    }

    pub(crate) fn push(&mut self, residual: f64, time: f64, x: Option<&DenseMatrix>) {
        self.residuals.push(residual);
        self.wall_times.push(time);
        if let (Some(b), Some(x)) = (self.bandwidths.as_mut(), x) {
            b.push(crate::matrix::Banded::band_extent(x));
        }
    }

    /// CSV with header `iter,residual_rel,time_s[,bandwidth]`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,residual_rel,time_s");
        if self.bandwidths.is_some() {
            out.push_str(",bandwidth");
        }
        out.push('\n');
        for (j, (r, t)) in self.residuals.iter().zip(&self.wall_times).enumerate() {
            let _ = write!(out, "{j},{r:.16e},{t:.6e}");
            if let Some(b) = &self.bandwidths {
                let _ = write!(out, ",{}", b[j]);
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: DenseMatrix,
    pub history: ConvergenceHistory,
    /// Filled in by callers that time preconditioner construction.
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    /// Final true relative residual.
    pub final_residual: f64,
    /// Iterates `X_0, X_1, ...` when requested.
    pub iterates: Vec<DenseMatrix>,
}

pub(crate) fn frob(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    crate::matrix::dot(a.as_slice(), b.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut h = ConvergenceHistory::new(true);
        let x = DenseMatrix::identity(2, 2);
        h.push(1.0, 0.0, Some(&x));
        h.push(0.5, 0.1, Some(&x));
        let csv = h.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iter,residual_rel,time_s,bandwidth");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1,5.0000000000000000e-1"));
        assert!(lines[2].ends_with(",0"));
    }
}
