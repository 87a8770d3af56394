//! Nearest Kronecker product (NKP) approximations `sum_s Y_s ⊗ Z_s` of an
//! operator `sum_k A_k ⊗ B_k`.
//!
//! Under the rearrangement `Y ⊗ Z -> vec(Y) vec(Z)^T` the operator becomes
//! `V_A V_B^T`, so the best Kronecker rank-q approximation is a truncated SVD
//! ([`nkp_svd`]). [`nkp_als`] reaches a (local) optimum by alternating least
//! squares. Both routes only ever touch `r×r` coefficient matrices: every
//! factor is returned as an explicit linear combination of the operator's own
//! factors, so symmetry and sparsity of the inputs carry over exactly.

use nalgebra::linalg::{Cholesky, SymmetricEigen, SVD};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Factor};
use crate::operator::{cross_gram, gram, kron_sum_norm, thin_r, KroneckerOperator, MATERIALIZE_CAP};

/// Singular values below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct KronApprox {
    pub ys: Vec<Factor>,
    pub zs: Vec<Factor>,
    /// Singular values of the rearranged operator, descending, padded to
    /// length r (SVD route only).
    pub sigma: Vec<f64>,
    /// Coefficients with `Y_s = sum_k wy[(k,s)] A_k` and
    /// `Z_s = sum_k wz[(k,s)] B_k`.
    pub wy: DenseMatrix,
    pub wz: DenseMatrix,
    /// `||M - sum_s Y_s ⊗ Z_s||_F`.
    pub error: f64,
    /// Squared residual after every ALS half-step (empty for the SVD route).
    pub history: Vec<f64>,
    pub iterations: usize,
}

impl KronApprox {
    pub fn q(&self) -> usize {
        self.ys.len()
    }

    /// The approximation as an operator in its own right.
    pub fn to_operator(&self) -> Result<KroneckerOperator> {
        KroneckerOperator::new(self.ys.clone(), self.zs.clone())
    }
}

/// Best Kronecker rank-q approximation via the SVD of the rearranged operator.
///
/// With thin QR factors `V_A = Q_A R_A`, `V_B = Q_B R_B` and the SVD
/// `R_A R_B^T = U S V^T`, the factors `V_Y = Q_A U S^{1/2}` are expressed
/// without `Q_A` as `V_Y = V_A (R_B^T V S^{-1/2})`. Rank deficiency shows up
/// as negligible singular values; q is capped at the numerical rank.
pub fn nkp_svd(op: &KroneckerOperator, q: usize) -> Result<KronApprox> {
    let r = op.r();
    if q == 0 || q > r {
        return Err(Error::Argument(format!("rank q = {q} must satisfy 1 <= q <= r = {r}")));
    }
    let st = op.factor_stacks();
    let ra = thin_r(st.va);
    let rb = thin_r(st.vb);
    let svd = SVD::new(&ra * rb.transpose(), true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));

    let mut sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    sigma.resize(r, 0.0);
    let rank = sigma.iter().filter(|&&s| s > RANK_TOL * sigma[0]).count();
    let q = q.min(rank);

    let mut wy = DenseMatrix::zeros(r, q);
    let mut wz = DenseMatrix::zeros(r, q);
    for s in 0..q {
        let idx = order[s];
        let scale = 1.0 / sigma[s].sqrt();
        wy.set_column(s, &(rb.tr_mul(&vt.row(idx).transpose()) * scale));
        wz.set_column(s, &(ra.tr_mul(&u.column(idx)) * scale));
    }
    let (ys, zs) = combine(op, &wy, &wz)?;
    let error = sigma[q..].iter().map(|s| s * s).sum::<f64>().sqrt();
    Ok(KronApprox {
        ys,
        zs,
        sigma,
        wy,
        wz,
        error,
        history: Vec::new(),
        iterations: 0,
    })
}

#[derive(Debug, Clone)]
pub struct AlsOptions {
    /// Absolute tolerance on the Frobenius error; `None` means
    /// `1e-8 ||M||_F`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Initial `Z_s`; `None` selects [`default_init`].
    pub init: Option<Vec<Factor>>,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: 25,
            init: None,
        }
    }
}

/// `Z_1 = I`, `Z_s = I + eta E_s` with `E_s` the single-entry matrix at
/// column-major position `s-1` and `eta = 1e-3 ||I||_F`. The perturbed
/// positions are distinct, so the family is linearly independent.
pub fn default_init(size: usize, q: usize) -> Vec<Factor> {
    let eta = 1e-3 * (size as f64).sqrt();
    (0..q)
        .map(|s| {
            let mut z = DenseMatrix::identity(size, size);
            if s > 0 {
                let idx = (s - 1) % (size * size);
                z.as_mut_slice()[idx] += eta;
            }
            Factor::Dense(z)
        })
        .collect()
}

/// Kronecker rank-q approximation by alternating least squares.
///
/// Each half-step solves the closed-form least squares problem for one side
/// with the other fixed, e.g. `V_Y = V_A V_B^T V_Z (V_Z^T V_Z)^{-1}`. After the
/// first half-step both stacks lie in the spans of `V_A`, `V_B`, so the
/// iteration runs on r×q coefficient matrices with the Gram matrices
/// `V_A^T V_A`, `V_B^T V_B`.
pub fn nkp_als(op: &KroneckerOperator, q: usize, opts: &AlsOptions) -> Result<KronApprox> {
    let r = op.r();
    if q == 0 || q > r {
        return Err(Error::Argument(format!("rank q = {q} must satisfy 1 <= q <= r = {r}")));
    }
    let init = match &opts.init {
        Some(z) => {
            if z.len() != q || z.iter().any(|f| f.nrows() != op.m() || f.ncols() != op.m()) {
                return Err(Error::Argument(format!(
                    "ALS needs {q} initial factors of size {m}x{m}",
                    m = op.m()
                )));
            }
            z.clone()
        }
        None => default_init(op.m(), q),
    };
    let a_refs: Vec<&Factor> = op.right_factors().iter().collect();
    let b_refs: Vec<&Factor> = op.left_factors().iter().collect();
    let ga = gram(&a_refs);
    let gb = gram(&b_refs);
    let norm2 = ga.dot(&gb);
    let ra = thin_r(op.factor_stacks().va);
    let rb = thin_r(op.factor_stacks().vb);
    let tol = opts.tol.unwrap_or(1e-8 * norm2.max(0.0).sqrt());

    // V_B^T V_Z and V_Z^T V_Z for the initial guess, computed directly
    let z_refs: Vec<&Factor> = init.iter().collect();
    let mut bz = cross_gram(&b_refs, &z_refs);
    let mut gz = gram(&z_refs);

    let mut history = Vec::new();
    let mut iterations = 0;
    let (wy, wz, error) = loop {
        // Y-step against an orthonormal basis of span{Z_s}; the basis change
        // leaves the least-squares solution Y ⊗ Z unchanged but keeps nearly
        // dependent factors from producing large cancelling coefficients
        let lz = orthonormal_basis(&gz, "Z")?;
        bz = right_inv_t(&bz, &lz);
        gz = DenseMatrix::identity(q, q);
        let wy = bz.clone();
        let ay = &ga * &wy;
        let gy = wy.tr_mul(&ay);
        history.push(three_term(norm2, &ay, &bz, &gy, &gz));

        // Z-step, likewise
        let ly = orthonormal_basis(&gy, "Y")?;
        let wy = right_inv_t(&wy, &ly);
        let ay = right_inv_t(&ay, &ly);
        let gy = DenseMatrix::identity(q, q);
        let wz = ay.clone();
        bz = &gb * &wz;
        gz = wz.tr_mul(&bz);
        history.push(three_term(norm2, &ay, &bz, &gy, &gz));
        iterations += 1;

        let error = factored_error(&ra, &rb, &wy, &wz);
        if error <= tol || iterations >= opts.max_iter {
            break (wy, wz, error);
        }
    };
    let (ys, zs) = combine(op, &wy, &wz)?;
    Ok(KronApprox {
        ys,
        zs,
        sigma: Vec::new(),
        wy,
        wz,
        error,
        history,
        iterations,
    })
}

/// `||sum_k A_k ⊗ B_k - sum_s Y_s ⊗ Z_s||_F` from Gram matrices:
/// `<V_A^T V_A, V_B^T V_B> - 2 <V_A^T V_Y, V_B^T V_Z> + <V_Y^T V_Y, V_Z^T V_Z>`.
///
/// When the three terms cancel to below `1e-8` of the first one, the value
/// is re-evaluated from QR factors of the joint stacks, which keeps nearly
/// exact approximations accurate to roundoff instead of its square root.
pub fn nkp_error(op: &KroneckerOperator, approx: &KronApprox) -> f64 {
    let a: Vec<&Factor> = op.right_factors().iter().collect();
    let b: Vec<&Factor> = op.left_factors().iter().collect();
    let y: Vec<&Factor> = approx.ys.iter().collect();
    let z: Vec<&Factor> = approx.zs.iter().collect();
    let t1 = gram(&a).dot(&gram(&b));
    if y.is_empty() {
        return t1.max(0.0).sqrt();
    }
    let t2 = cross_gram(&a, &y).dot(&cross_gram(&b, &z));
    let t3 = gram(&y).dot(&gram(&z));
    let res = t1 - 2.0 * t2 + t3;
    if res >= 1e-8 * t1 {
        return res.sqrt();
    }
    let left: Vec<&Factor> = a.iter().chain(&y).copied().collect();
    let right: Vec<&Factor> = b.iter().chain(&z).copied().collect();
    let mut coeffs = vec![1.0; a.len()];
    coeffs.extend(std::iter::repeat_n(-1.0, y.len()));
    kron_sum_norm(&left, &right, &coeffs)
}

/// Outcome of comparing `M` with an SPD approximation `M~`.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// Eigenvalues of the pencil `M u = lambda M~ u`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Spectral condition number of `M`.
    pub kappa: f64,
    /// `||M - M~||_F / ||M||_F`.
    pub relative_error: f64,
    /// `sqrt(1/N sum (1 - 1/lambda_i)^2)`.
    pub middle: f64,
    pub lower: f64,
    pub upper: f64,
    pub holds: bool,
}

/// Materializes both operators and evaluates the two-sided bound
/// `rel/kappa <= sqrt(1/N sum (1-1/lambda_i)^2) <= kappa*rel`.
pub fn spectral_diagnostics(op: &KroneckerOperator, approx: &KronApprox) -> Result<SpectralReport> {
    let m = op.materialize(MATERIALIZE_CAP)?;
    let mt = approx.to_operator()?.materialize(MATERIALIZE_CAP)?;
    let chol_m = spd_check(&m, "operator")?;
    let chol_mt = spd_check(&mt, "approximation")?;
    drop(chol_m);

    // L^{-1} M L^{-T} with M~ = L L^T has the pencil eigenvalues
    let l = chol_mt.l();
    let linv_m = l
        .solve_lower_triangular(&m)
        .ok_or_else(|| Error::Inapplicable("approximation has a singular Cholesky factor".into()))?;
    let mut sym = l
        .solve_lower_triangular(&linv_m.transpose())
        .ok_or_else(|| Error::Inapplicable("approximation has a singular Cholesky factor".into()))?;
    sym = (&sym + sym.transpose()) * 0.5;
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);

    let spec_m = SymmetricEigen::new(m.clone()).eigenvalues;
    let kappa = spec_m.max() / spec_m.min();
    let relative_error = (&m - &mt).norm() / m.norm();
    let n = eigenvalues.len() as f64;
    let middle = (eigenvalues.iter().map(|l| (1.0 - 1.0 / l).powi(2)).sum::<f64>() / n).sqrt();
    let lower = relative_error / kappa;
    let upper = relative_error * kappa;
    let slack = 1e-10 * (1.0 + upper);
    let holds = lower <= middle + slack && middle <= upper + slack;
    Ok(SpectralReport {
        eigenvalues,
        kappa,
        relative_error,
        middle,
        lower,
        upper,
        holds,
    })
}

fn spd_check(a: &DenseMatrix, what: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let asym = (a - a.transpose()).norm();
    if asym > 1e-12 * a.norm() {
        return Err(Error::Inapplicable(format!("materialized {what} is not symmetric")));
    }
    Cholesky::new(a.clone())
        .ok_or_else(|| Error::Inapplicable(format!("materialized {what} is not positive definite")))
}

/// Builds the factors from coefficient matrices.
fn combine(op: &KroneckerOperator, wy: &DenseMatrix, wz: &DenseMatrix) -> Result<(Vec<Factor>, Vec<Factor>)> {
    let a: Vec<&Factor> = op.right_factors().iter().collect();
    let b: Vec<&Factor> = op.left_factors().iter().collect();
    let build = |w: &DenseMatrix, f: &[&Factor]| -> Result<Vec<Factor>> {
        (0..w.ncols())
            .map(|s| Factor::linear_combination(w.column(s).as_slice(), f))
            .collect()
    };
    Ok((build(wy, &a)?, build(wz, &b)?))
}

/// Cholesky factor `L` of the q×q Gram matrix `G = L L^T` of the fixed
/// factors; `F L^{-T}` is then Frobenius-orthonormal. A failed or nearly
/// singular factorization means the factors are linearly dependent.
fn orthonormal_basis(g: &DenseMatrix, name: &'static str) -> Result<DenseMatrix> {
    let ch = Cholesky::new(g.clone()).ok_or(Error::DependentFactors { name })?;
    let l = ch.l();
    let q = g.nrows();
    let dmax = (0..q).map(|i| l[(i, i)]).fold(0.0, f64::max);
    let dmin = (0..q).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(dmin > 1e-12 * dmax) {
        return Err(Error::DependentFactors { name });
    }
    Ok(l)
}

/// `P L^{-T}` for lower triangular `L`.
fn right_inv_t(p: &DenseMatrix, l: &DenseMatrix) -> DenseMatrix {
    l.solve_lower_triangular(&p.transpose())
        .expect("nonzero diagonal checked")
        .transpose()
}

/// Squared error from the expanded formula, clamped at zero when roundoff
/// drives it slightly negative.
fn three_term(norm2: f64, ay: &DenseMatrix, bz: &DenseMatrix, gy: &DenseMatrix, gz: &DenseMatrix) -> f64 {
    let res = norm2 - 2.0 * ay.dot(bz) + gy.dot(gz);
    if res < 0.0 && res >= -10.0 * f64::EPSILON * norm2 {
        0.0
    } else {
        res
    }
}

/// `||R_A (I - W_Y W_Z^T) R_B^T||_F`, the error once both stacks lie in the
/// spans of `V_A` and `V_B`.
fn factored_error(ra: &DenseMatrix, rb: &DenseMatrix, wy: &DenseMatrix, wz: &DenseMatrix) -> f64 {
    let r = wy.nrows();
    let d = DenseMatrix::identity(r, r) - wy * wz.transpose();
    (ra * d * rb.transpose()).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::SparseMatrix;

    fn pseudo(n: usize, seed: f64) -> DenseMatrix {
        DenseMatrix::from_fn(n, n, |i, j| ((i * 13 + j * 7) as f64 * 0.61 + seed).sin())
    }

    fn op(n: usize, m: usize, r: usize) -> KroneckerOperator {
        KroneckerOperator::new(
            (0..r).map(|k| Factor::Dense(pseudo(n, k as f64))).collect(),
            (0..r).map(|k| Factor::Dense(pseudo(m, 5.0 + k as f64))).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_term_is_reproduced() {
        let o = op(4, 3, 1);
        let ap = nkp_svd(&o, 1).unwrap();
        assert_eq!(ap.error, 0.0);
        let diff = o.materialize(MATERIALIZE_CAP).unwrap() - ap.to_operator().unwrap().materialize(MATERIALIZE_CAP).unwrap();
        assert!(diff.norm() < 1e-13 * o.frobenius_norm());
    }

    #[test]
    fn full_rank_has_empty_tail() {
        let o = op(4, 4, 3);
        let ap = nkp_svd(&o, 3).unwrap();
        assert!(ap.error <= 1e-12 * o.frobenius_norm());
        assert!(nkp_error(&o, &ap) <= 1e-12 * o.frobenius_norm());
    }

    #[test]
    fn repeated_factors_cap_the_rank() {
        let a = Factor::Dense(pseudo(3, 0.0));
        let b = Factor::Dense(pseudo(3, 1.0));
        let o = KroneckerOperator::new(vec![a.clone(), a.scale(2.0)], vec![b.clone(), b]).unwrap();
        let ap = nkp_svd(&o, 2).unwrap();
        assert_eq!(ap.q(), 1);
        assert!(ap.error <= 1e-13 * o.frobenius_norm());
    }

    #[test]
    fn als_matches_svd_on_rank_one() {
        let o = op(4, 3, 1);
        let ap = nkp_als(&o, 1, &AlsOptions::default()).unwrap();
        assert!(ap.iterations <= 2);
        assert!(ap.error <= 1e-10 * o.frobenius_norm());
    }

    #[test]
    fn error_of_empty_and_exact_copy() {
        let o = op(3, 3, 2);
        let mut ap = nkp_svd(&o, 1).unwrap();
        ap.ys = o.right_factors().to_vec();
        ap.zs = o.left_factors().to_vec();
        assert!(nkp_error(&o, &ap) <= 1e-12 * o.frobenius_norm());
        ap.ys.clear();
        ap.zs.clear();
        let g = o.right_gram().dot(&o.left_gram()).sqrt();
        assert_eq!(nkp_error(&o, &ap), g);
    }

    #[test]
    fn dependent_init_is_rejected() {
        let o = op(3, 3, 2);
        let opts = AlsOptions {
            init: Some(vec![Factor::identity(3), Factor::identity(3)]),
            ..AlsOptions::default()
        };
        assert!(matches!(nkp_als(&o, 2, &opts), Err(Error::DependentFactors { name: "Z" })));
    }

    #[test]
    fn scaled_copy_diagnostics() {
        // M = T ⊗ I + I ⊗ T is SPD; M~ = 2M gives pencil eigenvalues 1/2
        let t = SparseMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 2.0), (1, 1, 2.0), (2, 2, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 2, -1.0), (2, 1, -1.0)],
        )
        .unwrap();
        let t = Factor::Sparse(t);
        let o = KroneckerOperator::new(vec![t.clone(), Factor::identity(3)], vec![Factor::identity(3), t.clone()]).unwrap();
        let mut ap = nkp_svd(&o, 2).unwrap();
        ap.ys = vec![t.scale(2.0), Factor::identity(3).scale(2.0)];
        ap.zs = vec![Factor::identity(3), t];
        let rep = spectral_diagnostics(&o, &ap).unwrap();
        assert!(rep.eigenvalues.iter().all(|l| (l - 0.5).abs() < 1e-12));
        assert!((rep.middle - 1.0).abs() < 1e-12);
        assert!(rep.holds);
    }
}
