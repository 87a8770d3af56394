//! Benchmark equations and their application-specific baseline
//! preconditioners.

mod circuit;
pub mod convdiff;
mod synthetic;

use std::sync::OnceLock;

use serde_json::Value;

pub use circuit::{circuit, CircuitData};
pub use convdiff::{convection_diffusion, ConvDiffData};
pub use synthetic::synthetic_banded;

use crate::error::{dim_err, Error, Result};
use crate::krylov::{PrecondKind, Preconditioner};
use crate::matrix::DenseMatrix;
use crate::operator::KroneckerOperator;
use crate::sylvester::StandardSylvester;

/// An equation `sum_k B_k X A_k^T = E` ready to be solved.
pub struct ProblemInstance {
    pub name: String,
    pub operator: KroneckerOperator,
    pub rhs: DenseMatrix,
    pub baseline: Option<SylvesterBaseline>,
    /// Generator parameters and grid information.
    pub params: Value,
}

impl ProblemInstance {
    pub fn new(name: impl Into<String>, operator: KroneckerOperator, rhs: DenseMatrix, params: Value) -> Result<Self> {
        if rhs.shape() != (operator.m(), operator.n()) {
            return Err(dim_err(format!(
                "right-hand side {:?} does not match operator {}x{}",
                rhs.shape(),
                operator.m(),
                operator.n()
            )));
        }
        Ok(Self {
            name: name.into(),
            operator,
            rhs,
            baseline: None,
            params,
        })
    }
}

/// Preconditioner `R -> X` solving the standard Sylvester equation
/// `L X + X G = R`, factorized once on first use.
pub struct SylvesterBaseline {
    left: DenseMatrix,
    right: DenseMatrix,
    solver: OnceLock<std::result::Result<StandardSylvester, String>>,
}

impl SylvesterBaseline {
    pub fn new(left: DenseMatrix, right: DenseMatrix) -> Self {
        Self {
            left,
            right,
            solver: OnceLock::new(),
        }
    }

    pub fn left(&self) -> &DenseMatrix {
        &self.left
    }

    pub fn right(&self) -> &DenseMatrix {
        &self.right
    }

    /// Computes the Schur forms now rather than at the first application.
    pub fn factorize(&self) -> Result<&StandardSylvester> {
        self.solver
            .get_or_init(|| StandardSylvester::new(&self.left, &self.right).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Factorization(e.clone()))
    }
}

impl Preconditioner for SylvesterBaseline {
    fn apply(&self, r: &DenseMatrix) -> Result<DenseMatrix> {
        self.factorize()?.solve(r)
    }

    fn kind(&self) -> PrecondKind {
        PrecondKind::Custom
    }
}
