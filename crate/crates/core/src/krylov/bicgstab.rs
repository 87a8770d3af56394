use std::time::Instant;

use super::{frob, ConvergenceHistory, Preconditioner, SolveReport, SolverOptions};
use crate::error::{dim_err, Result};
use crate::matrix::{axpy, DenseMatrix};
use crate::operator::KroneckerOperator;

/// Right-preconditioned Bi-CGSTAB on matrices, starting from `X_0 = 0`.
///
/// One iteration is a full cycle of two half-steps; the residual of the
/// intermediate `s` is kept in `half_residuals`. When the recurrence claims
/// convergence the true residual is checked, and the iteration restarts from
/// it if the two disagree.
pub fn bicgstab(
    op: &KroneckerOperator,
    precond: &dyn Preconditioner,
    e: &DenseMatrix,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    let start = Instant::now();
    if e.shape() != (op.m(), op.n()) {
        return Err(dim_err(format!(
            "right-hand side is {:?}, operator expects {}x{}",
            e.shape(),
            op.m(),
            op.n()
        )));
    }
    let enorm = e.norm();
    let mut hist = ConvergenceHistory::new(opts.record_bandwidth);
    let (m, n) = e.shape();
    let mut x = DenseMatrix::zeros(m, n);
    let mut iterates = Vec::new();
    if opts.record_iterates {
        iterates.push(x.clone());
    }
    let report = |x: DenseMatrix, hist: ConvergenceHistory, rel: f64, iterates| SolveReport {
        x,
        history: hist,
        setup_seconds: 0.0,
        solve_seconds: start.elapsed().as_secs_f64(),
        final_residual: rel,
        iterates,
    };
    if enorm == 0.0 {
        hist.push(0.0, 0.0, Some(&x));
        hist.converged = true;
        return Ok(report(x, hist, 0.0, iterates));
    }
    hist.push(1.0, 0.0, Some(&x));

    let mut r = e.clone();
    let mut r_hat = r.clone();
    let mut rho_prev = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut p = DenseMatrix::zeros(m, n);
    let mut v = DenseMatrix::zeros(m, n);
    let mut best = (1.0, x.clone());
    let mut iter = 0;
    while iter < opts.max_iter {
        let rho = frob(&r_hat, &r);
        if rho.abs() < 1e-30 * r_hat.norm() * r.norm() || !rho.is_finite() {
            hist.breakdown = Some(format!("rho breakdown at iteration {iter}"));
            break;
        }
        let beta = (rho / rho_prev) * (alpha / omega);
        // p = r + beta (p - omega v)
        axpy(&mut p, -omega, &v);
        p *= beta;
        p += &r;
        let p_hat = precond.apply(&p)?;
        v = op.apply(&p_hat)?;
        let denom = frob(&r_hat, &v);
        if denom == 0.0 || !denom.is_finite() {
            hist.breakdown = Some(format!("(r_hat, v) vanished at iteration {iter}"));
            break;
        }
        alpha = rho / denom;
        let mut s = r.clone();
        axpy(&mut s, -alpha, &v);
        axpy(&mut x, alpha, &p_hat);
        let s_rel = s.norm() / enorm;
        hist.half_residuals.push(s_rel);
        iter += 1;

        if s_rel <= opts.tol {
            r = s;
        } else {
            let s_hat = precond.apply(&s)?;
            let t = op.apply(&s_hat)?;
            let tt = frob(&t, &t);
            omega = if tt > 0.0 { frob(&t, &s) / tt } else { 0.0 };
            axpy(&mut x, omega, &s_hat);
            r = s;
            axpy(&mut r, -omega, &t);
        }
        rho_prev = rho;
        let mut rel = r.norm() / enorm;

        if rel <= opts.tol {
            // confirm with the true residual
            let true_r = e - op.apply(&x)?;
            let true_rel = true_r.norm() / enorm;
            rel = true_rel;
            if true_rel > opts.tol {
                r = true_r;
                r_hat = r.clone();
                rho_prev = 1.0;
                alpha = 1.0;
                omega = 1.0;
                p.fill(0.0);
                v.fill(0.0);
            }
        }
        hist.push(rel, start.elapsed().as_secs_f64(), Some(&x));
        if opts.record_iterates {
            iterates.push(x.clone());
        }
        if rel < best.0 {
            best = (rel, x.clone());
        }
        if rel <= opts.tol {
            break;
        }
        if omega == 0.0 {
            hist.breakdown = Some(format!("omega vanished at iteration {iter}"));
            break;
        }
    }
    let true_rel = (e - op.apply(&x)?).norm() / enorm;
    let (final_rel, x) = if hist.breakdown.is_some() && best.0 < true_rel {
        best
    } else {
        (true_rel, x)
    };
    if let Some(last) = hist.residuals.last_mut() {
        if iter > 0 {
            *last = final_rel;
        }
    }
    hist.converged = final_rel <= opts.tol;
    hist.iterations = iter;
    Ok(report(x, hist, final_rel, iterates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::IdentityPreconditioner;

    #[test]
    fn identity_system_one_iteration() {
        let op = KroneckerOperator::identity(3, 2);
        let e = DenseMatrix::from_fn(2, 3, |i, j| (i + j) as f64 - 1.5);
        let rep = bicgstab(&op, &IdentityPreconditioner, &e, &SolverOptions::default()).unwrap();
        assert!(rep.history.converged);
        assert_eq!(rep.history.iterations, 1);
        assert!((rep.x - e).norm() < 1e-14);
    }
}
