use std::time::Instant;

use super::{frob, ConvergenceHistory, PrecondKind, Preconditioner, SolveReport, SolverOptions};
use crate::error::{dim_err, Result};
use crate::matrix::{axpy, DenseMatrix};
use crate::operator::KroneckerOperator;

/// Restarted, right-preconditioned GMRES with modified Gram–Schmidt and
/// Givens rotations, starting from `X_0 = 0`.
///
/// The Arnoldi estimate is recorded after every inner step; at each restart
/// and at exit the true residual `||E - M(X)||_F` is recomputed and replaces
/// the estimate of that step.
pub fn gmres(
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
    let mut x = DenseMatrix::zeros(op.m(), op.n());
    let mut iterates = Vec::new();
    if opts.record_iterates {
        iterates.push(x.clone());
    }
    if enorm == 0.0 {
        hist.push(0.0, 0.0, Some(&x));
        hist.converged = true;
        return Ok(finish(x, hist, start, 0.0, iterates));
    }
    hist.push(1.0, 0.0, Some(&x));

    let identity = precond.kind() == PrecondKind::None;
    let restart = opts.restart.max(1);
    let mut r = e.clone();
    let mut beta = enorm;
    let mut rel = 1.0;
    let mut total = 0;
    while rel > opts.tol && total < opts.max_iter {
        let mut v = vec![&r / beta];
        let mut z: Vec<DenseMatrix> = Vec::new();
        let mut h: Vec<Vec<f64>> = Vec::new();
        let mut rot: Vec<(f64, f64)> = Vec::new();
        let mut g = vec![beta];

        for j in 0..restart {
            if total >= opts.max_iter {
                break;
            }
            let zj_owned;
            let zj = if identity {
                &v[j]
            } else {
                zj_owned = precond.apply(&v[j])?;
                &zj_owned
            };
            let mut w = op.apply(zj)?;
            let wnorm0 = w.norm();
            let mut hj = vec![0.0; j + 2];
            for (i, vi) in v.iter().enumerate() {
                hj[i] = frob(&w, vi);
                axpy(&mut w, -hj[i], vi);
            }
            let hnext = w.norm();
            hj[j + 1] = hnext;
            for (i, &(c, s)) in rot.iter().enumerate() {
                let t = c * hj[i] + s * hj[i + 1];
                hj[i + 1] = -s * hj[i] + c * hj[i + 1];
                hj[i] = t;
            }
            let (c, s) = givens(hj[j], hj[j + 1]);
            hj[j] = c * hj[j] + s * hj[j + 1];
            hj[j + 1] = 0.0;
            rot.push((c, s));
            g.push(-s * g[j]);
            g[j] *= c;
            h.push(hj);
            if !identity {
                z.push(zj.clone());
            }
            total += 1;

            let happy = hnext <= 1e-14 * wnorm0.max(f64::MIN_POSITIVE);
            let est = g[j + 1].abs() / enorm;
            if opts.record_bandwidth || opts.record_iterates {
                let basis = if identity { &v } else { &z };
                let xj = update(&x, &h, &g, basis);
                hist.push(est, start.elapsed().as_secs_f64(), Some(&xj));
                if opts.record_iterates {
                    iterates.push(xj);
                }
            } else {
                hist.push(est, start.elapsed().as_secs_f64(), None);
            }
            if est <= opts.tol || happy {
                break;
            }
            v.push(w / hnext);
        }
        if h.is_empty() {
            break;
        }
        let basis = if identity { &v } else { &z };
        x = update(&x, &h, &g, basis);
        r = e - op.apply(&x)?;
        beta = r.norm();
        rel = beta / enorm;
        if let Some(last) = hist.residuals.last_mut() {
            *last = rel;
        }
        if let Some(last) = iterates.last_mut() {
            last.copy_from(&x);
        }
    }
    hist.converged = rel <= opts.tol;
    hist.iterations = total;
    Ok(finish(x, hist, start, rel, iterates))
}

fn finish(
    x: DenseMatrix,
    history: ConvergenceHistory,
    start: Instant,
    final_residual: f64,
    iterates: Vec<DenseMatrix>,
) -> SolveReport {
    SolveReport {
        x,
        history,
        setup_seconds: 0.0,
        solve_seconds: start.elapsed().as_secs_f64(),
        final_residual,
        iterates,
    }
}

/// Rotation `(c, s)` with `[c s; -s c] [a; b] = [rho; 0]`.
pub(crate) fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else if b.abs() > a.abs() {
        let t = a / b;
        let s = 1.0 / (1.0 + t * t).sqrt();
        (s * t, s)
    } else {
        let t = b / a;
        let c = 1.0 / (1.0 + t * t).sqrt();
        (c, c * t)
    }
}

/// `x + sum_i y_i basis_i` with `H y = g` on the leading `k = h.len()` rows.
fn update(x: &DenseMatrix, h: &[Vec<f64>], g: &[f64], basis: &[DenseMatrix]) -> DenseMatrix {
    let k = h.len();
    let mut y = g[..k].to_vec();
    for i in (0..k).rev() {
        for jj in i + 1..k {
            y[i] -= h[jj][i] * y[jj];
        }
        y[i] /= h[i][i];
    }
    let mut out = x.clone();
    for (yi, bi) in y.iter().zip(basis) {
        axpy(&mut out, *yi, bi);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::IdentityPreconditioner;

    #[test]
    fn identity_system_one_step() {
        let op = KroneckerOperator::identity(3, 4);
        let e = DenseMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 + 1.0);
        let rep = gmres(&op, &IdentityPreconditioner, &e, &SolverOptions::default()).unwrap();
        assert!(rep.history.converged);
        assert_eq!(rep.history.iterations, 1);
        assert!((rep.x - e).norm() < 1e-14);
        assert_eq!(rep.history.residuals.len(), 2);
    }

    #[test]
    fn zero_rhs_converges_immediately() {
        let op = KroneckerOperator::identity(2, 2);
        let rep = gmres(&op, &IdentityPreconditioner, &DenseMatrix::zeros(2, 2), &SolverOptions::default()).unwrap();
        assert!(rep.history.converged);
        assert_eq!(rep.history.iterations, 0);
        assert_eq!(rep.x, DenseMatrix::zeros(2, 2));
    }

    #[test]
    fn givens_annihilates() {
        for (a, b) in [(3.0, 4.0), (-1.0, 0.5), (0.0, 2.0), (2.0, 0.0)] {
            let (c, s) = givens(a, b);
            assert!((-s * a + c * b).abs() < 1e-15);
            assert!((c * c + s * s - 1.0).abs() < 1e-15);
        }
    }
}
