use serde::Serialize;

use super::{ConvergenceHistory, Preconditioner};
use crate::error::{Error, Result};
use crate::matrix::{Banded, DenseMatrix, Factor};
use crate::operator::KroneckerOperator;

#[derive(Debug, Clone, Serialize)]
pub struct AuditRow {
    pub iteration: usize,
    pub observed: usize,
    pub bound: usize,
    /// `bound - observed`; zero when the bound is attained.
    pub tightness: i64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub beta_m: usize,
    pub beta_p: usize,
    pub beta_e: usize,
    pub rows: Vec<AuditRow>,
    pub holds: bool,
}

/// Checks `beta(X_j) <= (2j-1)(beta_M + beta_P) + beta_P + beta_E` for every
/// recorded full iteration `j >= 1` of a Bi-CGSTAB history, where
/// `beta_M = max_k (beta(A_k) + beta(B_k))` and `beta_P` is the analogous
/// quantity of the preconditioner.
pub fn bandwidth_audit(
    history: &ConvergenceHistory,
    op: &KroneckerOperator,
    precond: &dyn Preconditioner,
    e: &DenseMatrix,
) -> Result<AuditReport> {
    let bandwidths = history
        .bandwidths
        .as_ref()
        .ok_or_else(|| Error::Inapplicable("bandwidths were not recorded".into()))?;
    let beta_m = operator_bandwidth(op)?;
    let beta_p = precond
        .bandwidth()
        .ok_or_else(|| Error::Inapplicable("preconditioner bandwidth unknown (dense factors?)".into()))?;
    let beta_e = e.band_extent();
    let rows: Vec<AuditRow> = bandwidths
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, &observed)| {
            let bound = (2 * j - 1) * (beta_m + beta_p) + beta_p + beta_e;
            AuditRow {
                iteration: j,
                observed,
                bound,
                tightness: bound as i64 - observed as i64,
            }
        })
        .collect();
    let holds = rows.iter().all(|r| r.tightness >= 0);
    Ok(AuditReport {
        beta_m,
        beta_p,
        beta_e,
        rows,
        holds,
    })
}

/// `max_k (beta(A_k) + beta(B_k))`; dense factors make the audit inapplicable.
pub fn operator_bandwidth(op: &KroneckerOperator) -> Result<usize> {
    pair_bandwidth(op.right_factors(), op.left_factors())
}

pub(crate) fn pair_bandwidth(right: &[Factor], left: &[Factor]) -> Result<usize> {
    let mut beta = 0;
    for (a, b) in right.iter().zip(left) {
        if !a.is_sparse() || !b.is_sparse() {
            return Err(Error::Inapplicable("bandwidth audit needs sparse (banded) factors".into()));
        }
        beta = beta.max(a.band_extent() + b.band_extent());
    }
    Ok(beta)
}
