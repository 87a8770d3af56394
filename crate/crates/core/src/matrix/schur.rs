use nalgebra::linalg::Hessenberg;

use super::DenseMatrix;
use crate::error::{dim_err, Error, Result};

/// Real Schur form `A = Q T Q^T` with orthogonal `Q` and quasi-upper-triangular
/// `T` (1x1 and 2x2 diagonal blocks; 2x2 blocks carry complex pairs).
#[derive(Debug, Clone)]
pub struct RealSchur {
    pub q: DenseMatrix,
    pub t: DenseMatrix,
    /// Start index of every diagonal block, in order.
    pub blocks: Vec<usize>,
}

/// QR sweeps allowed per eigenvalue before giving up.
const SWEEPS_PER_EIGENVALUE: usize = 30;

/// Hessenberg reduction followed by Francis double-shift QR sweeps with
/// exceptional shifts after 10 and 30 stagnant sweeps.
pub fn real_schur(a: &DenseMatrix) -> Result<RealSchur> {
    if !a.is_square() {
        return Err(dim_err(format!("Schur form of a non-square {:?} matrix", a.shape())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("Schur form of a matrix with non-finite entries".into()));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(RealSchur {
            q: DenseMatrix::zeros(0, 0),
            t: DenseMatrix::zeros(0, 0),
            blocks: Vec::new(),
        });
    }
    let (mut q, mut t) = Hessenberg::new(a.clone()).unpack();
    francis_qr(&mut t, &mut q)?;
    for j in 0..n {
        for i in (j + 2)..n {
            t[(i, j)] = 0.0;
        }
    }
    let mut blocks = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        blocks.push(i);
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            if i + 2 < n && t[(i + 2, i + 1)] != 0.0 {
                return Err(Error::Factorization(format!("Schur form has overlapping 2x2 blocks at {i}")));
            }
            i += 2;
        } else {
            i += 1;
        }
    }
    Ok(RealSchur { q, t, blocks })
}

/// In-place reduction of the upper Hessenberg `h` to real Schur form, with
/// the orthogonal transformations accumulated into `v`. Converged 2x2 blocks
/// with real eigenvalues are split by a rotation.
fn francis_qr(h: &mut DenseMatrix, v: &mut DenseMatrix) -> Result<()> {
    let nn = h.nrows();
    let eps = f64::EPSILON;
    let budget = SWEEPS_PER_EIGENVALUE * nn;
    let mut norm = 0.0;
    for j in 0..nn {
        for i in 0..nn.min(j + 2) {
            norm += h[(i, j)].abs();
        }
    }
    let mut exshift = 0.0;
    let mut iter = 0;
    let mut sweeps = 0;
    let mut n = nn as isize - 1;
    let (mut p, mut q, mut r, mut s, mut z);
    let (mut x, mut y, mut w);
    while n >= 0 {
        let nu = n as usize;
        // look for a single small subdiagonal element
        let mut l = nu;
        while l > 0 {
            s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[(l, l - 1)].abs() < eps * s {
                h[(l, l - 1)] = 0.0;
                break;
            }
            l -= 1;
        }

        if l == nu {
            // one root
            h[(nu, nu)] += exshift;
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            // two roots
            let m = nu - 1;
            w = h[(nu, m)] * h[(m, nu)];
            p = (h[(m, m)] - h[(nu, nu)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[(nu, nu)] += exshift;
            h[(m, m)] += exshift;
            if q >= 0.0 {
                // real pair: rotate to upper triangular
                z = if p >= 0.0 { p + z } else { p - z };
                x = h[(nu, m)];
                s = x.abs() + z.abs();
                p = x / s;
                q = z / s;
                r = (p * p + q * q).sqrt();
                p /= r;
                q /= r;
                for j in m..nn {
                    z = h[(m, j)];
                    h[(m, j)] = q * z + p * h[(nu, j)];
                    h[(nu, j)] = q * h[(nu, j)] - p * z;
                }
                for i in 0..=nu {
                    z = h[(i, m)];
                    h[(i, m)] = q * z + p * h[(i, nu)];
                    h[(i, nu)] = q * h[(i, nu)] - p * z;
                }
                for i in 0..nn {
                    z = v[(i, m)];
                    v[(i, m)] = q * z + p * v[(i, nu)];
                    v[(i, nu)] = q * v[(i, nu)] - p * z;
                }
                h[(nu, m)] = 0.0;
            }
            n -= 2;
            iter = 0;
        } else {
            // no convergence yet: form the shift
            x = h[(nu, nu)];
            y = 0.0;
            w = 0.0;
            if l < nu {
                y = h[(nu - 1, nu - 1)];
                w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            }
            if iter == 10 {
                exshift += x;
                for i in 0..=nu {
                    h[(i, i)] -= x;
                }
                s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in 0..=nu {
                        h[(i, i)] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;
            sweeps += 1;
            if sweeps > budget {
                return Err(Error::Factorization(format!(
                    "real Schur iteration did not converge within {budget} sweeps"
                )));
            }

            // look for two consecutive small subdiagonal elements
            let mut m = nu - 2;
            loop {
                z = h[(m, m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(m + 1, m)] + h[(m, m + 1)];
                q = h[(m + 1, m + 1)] - z - r - s;
                r = h[(m + 2, m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[(m, m - 1)].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h[(m - 1, m - 1)].abs() + z.abs() + h[(m + 1, m + 1)].abs()))
                {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nu {
                h[(i, i - 2)] = 0.0;
                if i > m + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }

            // double QR step on rows l..=n and columns m..=n
            for k in m..nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h[(k, k - 1)] = -s * x;
                    } else if l != m {
                        h[(k, k - 1)] = -h[(k, k - 1)];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..nn {
                        p = h[(k, j)] + q * h[(k + 1, j)];
                        if notlast {
                            p += r * h[(k + 2, j)];
                            h[(k + 2, j)] -= p * z;
                        }
                        h[(k, j)] -= p * x;
                        h[(k + 1, j)] -= p * y;
                    }
                    for i in 0..=nu.min(k + 3) {
                        p = x * h[(i, k)] + y * h[(i, k + 1)];
                        if notlast {
                            p += z * h[(i, k + 2)];
                            h[(i, k + 2)] -= p * r;
                        }
                        h[(i, k)] -= p;
                        h[(i, k + 1)] -= p * q;
                    }
                    for i in 0..nn {
                        p = x * v[(i, k)] + y * v[(i, k + 1)];
                        if notlast {
                            p += z * v[(i, k + 2)];
                            v[(i, k + 2)] -= p * r;
                        }
                        v[(i, k)] -= p;
                        v[(i, k + 1)] -= p * q;
                    }
                }
            }
        }
    }
    Ok(())
}

impl RealSchur {
    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    /// Size (1 or 2) of the block starting at `start`.
    pub fn block_size(&self, start: usize) -> usize {
        if start + 1 < self.dim() && self.t[(start + 1, start)] != 0.0 {
            2
        } else {
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(a: &DenseMatrix) -> RealSchur {
        let s = real_schur(a).unwrap();
        let n = a.nrows();
        let recon = &s.q * &s.t * s.q.transpose();
        assert!((recon - a).norm() <= 1e-12 * a.norm().max(1.0));
        assert!((s.q.transpose() * &s.q - DenseMatrix::identity(n, n)).norm() <= 1e-12);
        s
    }

    #[test]
    fn diagonal_input() {
        let a = DenseMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let s = check(&a);
        let mut d: Vec<f64> = (0..3).map(|i| s.t[(i, i)]).collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(d, vec![1.0, 2.0, 3.0]);
        assert_eq!(s.blocks, vec![0, 1, 2]);
    }

    #[test]
    fn rotation_gives_complex_block() {
        let a = DenseMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let s = check(&a);
        assert_eq!(s.blocks, vec![0]);
        assert_eq!(s.block_size(0), 2);
        let t = &s.t;
        // eigenvalues of the 2x2 block are +-i: trace 0, determinant 1
        let tr = t[(0, 0)] + t[(1, 1)];
        let det = t[(0, 0)] * t[(1, 1)] - t[(0, 1)] * t[(1, 0)];
        assert!(tr.abs() < 1e-14);
        assert!((det - 1.0).abs() < 1e-14);
    }

    #[test]
    fn general_matrices_reconstruct() {
        for n in [3, 6, 20, 41] {
            let a = DenseMatrix::from_fn(n, n, |i, j| ((i * 31 + j * 17) as f64 * 0.29 + n as f64).sin());
            check(&a);
        }
    }

    #[test]
    fn permutation_cycle() {
        // eigenvalues on the unit circle; a classic stall case without
        // exceptional shifts
        let n = 5;
        let a = DenseMatrix::from_fn(n, n, |i, j| if i == (j + 1) % n { 1.0 } else { 0.0 });
        check(&a);
    }

    #[test]
    fn rejects_non_square() {
        assert!(real_schur(&DenseMatrix::zeros(2, 3)).is_err());
    }
}
