//! Reference implementations on explicitly materialized systems.
//!
//! Everything here works on `vec(X)` with plain dense linear algebra and is
//! written independently of the structured code paths, so it can serve as a
//! check on them. Only small sizes are practical.

use nalgebra::{DVector, SymmetricEigen, SVD};

use crate::error::{dim_err, Error, Result};
use crate::krylov::Preconditioner;
use crate::matrix::{unvec, vectorize, DenseMatrix};

/// Rearrangement of an `(nm)×(nm)` matrix made of `n×n` blocks of size
/// `m×m` into the `n²×m²` matrix with `R(A ⊗ B) = vec(A) vec(B)^T`.
pub fn rearrange(mat: &DenseMatrix, n: usize, m: usize) -> Result<DenseMatrix> {
    if mat.shape() != (n * m, n * m) {
        return Err(dim_err(format!("rearranging {:?} as {n}x{n} blocks of {m}x{m}", mat.shape())));
    }
    let mut r = DenseMatrix::zeros(n * n, m * m);
    for j in 0..n {
        for i in 0..n {
            let row = i + j * n;
            for l in 0..m {
                for k in 0..m {
                    r[(row, k + l * m)] = mat[(i * m + k, j * m + l)];
                }
            }
        }
    }
    Ok(r)
}

/// Singular values of the rearranged matrix, descending.
pub fn rearranged_singular_values(mat: &DenseMatrix, n: usize, m: usize) -> Result<Vec<f64>> {
    let r = rearrange(mat, n, m)?;
    let mut s: Vec<f64> = SVD::new(r, false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// `sqrt(sum_{k>q} sigma_k^2)`: the error of the best Kronecker rank-q
/// approximation.
pub fn svd_tail(mat: &DenseMatrix, n: usize, m: usize, q: usize) -> Result<f64> {
    let s = rearranged_singular_values(mat, n, m)?;
    Ok(s.iter().skip(q).map(|x| x * x).sum::<f64>().sqrt())
}

/// Matrix of a linear map on `m×n` matrices, acting on `vec(X)`.
pub fn materialize_map(
    m: usize,
    n: usize,
    f: impl Fn(&DenseMatrix) -> Result<DenseMatrix>,
) -> Result<DenseMatrix> {
    let size = m * n;
    let mut out = DenseMatrix::zeros(size, size);
    let mut e = DenseMatrix::zeros(m, n);
    for k in 0..size {
        e.as_mut_slice()[k] = 1.0;
        let y = f(&e)?;
        out.column_mut(k).copy_from_slice(vectorize(&y));
        e.as_mut_slice()[k] = 0.0;
    }
    Ok(out)
}

pub fn materialize_preconditioner(p: &dyn Preconditioner, m: usize, n: usize) -> Result<DenseMatrix> {
    materialize_map(m, n, |r| p.apply(r))
}

fn dot(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.dot(b)
}

/// Iterates `x_0 = 0, x_1, ...` of restarted right-preconditioned GMRES on
/// `M x = b` with the preconditioner matrix `p`. Arnoldi uses classical
/// Gram–Schmidt with one reorthogonalization pass, and every small
/// least-squares problem is solved from scratch by an SVD. The stopping
/// rules match the structured solver: relative tolerance on the Arnoldi
/// estimate, true residual at each restart.
pub fn gmres_vec(
    mat: &DenseMatrix,
    p: &DenseMatrix,
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Vec<DVector<f64>> {
    let size = b.len();
    let bv = DVector::from_column_slice(b);
    let bnorm = bv.norm();
    let mut x = DVector::zeros(size);
    let mut iterates = vec![x.clone()];
    if bnorm == 0.0 {
        return iterates;
    }
    let mut total = 0;
    let mut r = bv.clone();
    loop {
        let beta = r.norm();
        if beta / bnorm <= tol || total >= max_iter {
            break;
        }
        let mut v: Vec<DVector<f64>> = vec![&r / beta];
        let mut z: Vec<DVector<f64>> = Vec::new();
        let mut h = DenseMatrix::zeros(restart + 1, restart);
        let mut cols = 0;
        for j in 0..restart {
            if total >= max_iter {
                break;
            }
            let zj = p * &v[j];
            let mut w = mat * &zj;
            let w0 = w.norm();
            for _ in 0..2 {
                let coeffs: Vec<f64> = v.iter().map(|vi| dot(vi, &w)).collect();
                for (i, c) in coeffs.iter().enumerate() {
                    h[(i, j)] += c;
                    w -= &v[i] * *c;
                }
            }
            let hn = w.norm();
            h[(j + 1, j)] = hn;
            z.push(zj);
            cols = j + 1;
            total += 1;

            let (y, ls_res) = least_squares(&h, cols, beta);
            let mut xj = x.clone();
            for (yi, zi) in y.iter().zip(&z) {
                xj += zi * *yi;
            }
            let est = ls_res / bnorm;
            iterates.push(xj);
            if est <= tol || hn <= 1e-14 * w0.max(f64::MIN_POSITIVE) {
                break;
            }
            v.push(w / hn);
        }
        if cols == 0 {
            break;
        }
        x = iterates.last().expect("at least x_0").clone();
        r = &bv - mat * &x;
    }
    iterates
}

/// `argmin_y ||beta e_1 - H(0..=k, 0..k) y||` by SVD, with the minimal residual.
fn least_squares(h: &DenseMatrix, k: usize, beta: f64) -> (Vec<f64>, f64) {
    let hk = h.view((0, 0), (k + 1, k)).into_owned();
    let mut rhs = DVector::zeros(k + 1);
    rhs[0] = beta;
    let svd = SVD::new(hk.clone(), true, true);
    let y = svd.solve(&rhs, 0.0).expect("U and V were computed");
    let res = (rhs - hk * &y).norm();
    (y.iter().copied().collect(), res)
}

/// Iterates of right-preconditioned Bi-CGSTAB (van der Vorst) on `M x = b`,
/// one entry per full iteration, starting from `x_0 = 0`.
pub fn bicgstab_vec(mat: &DenseMatrix, p: &DenseMatrix, b: &[f64], tol: f64, max_iter: usize) -> Vec<DVector<f64>> {
    let size = b.len();
    let bv = DVector::from_column_slice(b);
    let bnorm = bv.norm();
    let mut x = DVector::zeros(size);
    let mut iterates = vec![x.clone()];
    if bnorm == 0.0 {
        return iterates;
    }
    let mut r = bv.clone();
    let r0 = r.clone();
    let (mut rho_old, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = DVector::zeros(size);
    let mut pv = DVector::zeros(size);
    for _ in 0..max_iter {
        let rho = dot(&r0, &r);
        let beta = (rho / rho_old) * (alpha / omega);
        pv = &r + (&pv - &v * omega) * beta;
        let y = p * &pv;
        v = mat * &y;
        alpha = rho / dot(&r0, &v);
        let h = &x + &y * alpha;
        let s = &r - &v * alpha;
        if s.norm() / bnorm <= tol {
            x = h;
            iterates.push(x.clone());
            break;
        }
        let zs = p * &s;
        let t = mat * &zs;
        omega = dot(&t, &s) / dot(&t, &t);
        x = h + &zs * omega;
        r = &s - &t * omega;
        rho_old = rho;
        iterates.push(x.clone());
        if r.norm() / bnorm <= tol {
            break;
        }
    }
    iterates
}

/// Converts a vector iterate back to an `m×n` matrix.
pub fn as_matrix(v: &DVector<f64>, m: usize, n: usize) -> Result<DenseMatrix> {
    unvec(v.as_slice(), m, n)
}

/// Eigenvalues of the SPD pencil `(M, Mt)`, ascending, from the symmetric
/// eigendecomposition `Mt = V L V^T` and `Mt^{-1/2} M Mt^{-1/2}`.
pub fn pencil_eigenvalues(mat: &DenseMatrix, mt: &DenseMatrix) -> Result<Vec<f64>> {
    let eig = SymmetricEigen::new(mt.clone());
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::Inapplicable("pencil matrix is not positive definite".into()));
    }
    let scale = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()));
    let root = &eig.eigenvectors * DenseMatrix::from_diagonal(&scale) * eig.eigenvectors.transpose();
    let sym = &root * mat * &root;
    let sym = (&sym + sym.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{dense, rng};

    #[test]
    fn rearrangement_of_kronecker_product_is_rank_one() {
        let mut g = rng(3);
        let a = dense(3, 3, &mut g);
        let b = dense(2, 2, &mut g);
        let r = rearrange(&a.kronecker(&b), 3, 2).unwrap();
        let va = DenseMatrix::from_column_slice(9, 1, a.as_slice());
        let vb = DenseMatrix::from_column_slice(4, 1, b.as_slice());
        assert!((r - va * vb.transpose()).norm() < 1e-14);
    }

    #[test]
    fn gmres_vec_solves_small_system() {
        let mut g = rng(4);
        let a = dense(8, 8, &mut g) + DenseMatrix::identity(8, 8) * 5.0;
        let b: Vec<f64> = (0..8).map(|i| i as f64 - 3.0).collect();
        let it = gmres_vec(&a, &DenseMatrix::identity(8, 8), &b, 1e-12, 8, 20);
        let x = it.last().unwrap();
        assert!((&a * x - DVector::from_vec(b)).norm() < 1e-10);
    }

    #[test]
    fn bicgstab_vec_solves_small_system() {
        let mut g = rng(5);
        let a = dense(8, 8, &mut g) + DenseMatrix::identity(8, 8) * 5.0;
        let b: Vec<f64> = (0..8).map(|i| (i as f64).cos()).collect();
        let it = bicgstab_vec(&a, &DenseMatrix::identity(8, 8), &b, 1e-12, 50);
        let x = it.last().unwrap();
        assert!((&a * x - DVector::from_vec(b)).norm() < 1e-10);
    }

    #[test]
    fn pencil_of_scaled_matrix() {
        let mut g = rng(6);
        let c = dense(5, 5, &mut g);
        let m = &c * c.transpose() + DenseMatrix::identity(5, 5);
        let ev = pencil_eigenvalues(&(m.clone() * 2.0), &m).unwrap();
        assert!(ev.iter().all(|l| (l - 2.0).abs() < 1e-12));
    }
}
