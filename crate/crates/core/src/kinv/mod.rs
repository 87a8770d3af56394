//! Low Kronecker rank approximate inverses `P = sum_s C_s ⊗ D_s` of the
//! operator, fitted by alternating least squares on `||I - M P||_F`.
//!
//! Each half-step fixes one side and solves the normal equations of the
//! other; see [`normal`]. The sparse variant restricts every factor to a
//! prescribed pattern and solves one small system per column.

mod normal;
mod pattern;

use rayon::ThreadPool;

pub use normal::{NormalSystem, SideCoefficients};
pub use pattern::{build_pattern, BuiltPattern, PatternSpec, PatternVariant, SparsityPattern};

use crate::error::{dim_err, Error, Result};
use crate::krylov::{PrecondKind, Preconditioner};
use crate::matrix::{DenseMatrix, Factor, SparseMatrix, SpdSolve};
use crate::operator::{gram, kron_sum_norm, KroneckerOperator};

/// Largest number of terms for which `A_k^T A_l`, `B_k^T B_l` are cached.
pub const GRAM_CACHE_MAX_TERMS: usize = 32;

#[derive(Debug, Clone)]
pub struct KinvOptions {
    /// Absolute tolerance on `||I - M P||_F`; `None` means `0.1 sqrt(nm)`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Initial `C_s`; `None` selects [`default_init`] (or its pattern
    /// conforming version).
    pub init: Option<Vec<Factor>>,
    /// Worker threads for coefficient assembly and column solves; `None`
    /// uses the available parallelism.
    pub threads: Option<usize>,
    /// Full iterations over which less than [`STAGNATION_RATIO`] relative
    /// progress stops the iteration.
    pub stagnation_window: usize,
}

impl Default for KinvOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: 10,
            init: None,
            threads: None,
            stagnation_window: 5,
        }
    }
}

/// Relative residual decrease over the stagnation window below which the
/// iteration is considered stalled.
pub const STAGNATION_RATIO: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct KronInverse {
    pub cs: Vec<Factor>,
    pub ds: Vec<Factor>,
    pub pattern_c: Option<SparsityPattern>,
    pub pattern_d: Option<SparsityPattern>,
    /// `||I - M P||_F` at exit, evaluated stably.
    pub final_residual: f64,
    /// Formula residual after every full iteration.
    pub history: Vec<f64>,
    /// Formula residual after every D-step.
    pub half_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// The coefficients of both sides at one point of the iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AlsCoefficients {
    /// `beta[k][l][(s,t)] = <A_k^T A_l, C_s C_t^T>_F`.
    pub beta: Vec<Vec<DenseMatrix>>,
    /// `delta[k][s] = <A_k^T, C_s>_F`.
    pub delta: Vec<Vec<f64>>,
    /// `alpha[k][l][(s,t)] = <B_k^T B_l, D_s D_t^T>_F`.
    pub alpha: Vec<Vec<DenseMatrix>>,
    /// `gamma[k][s] = <B_k^T, D_s>_F`.
    pub gamma: Vec<Vec<f64>>,
}

impl AlsCoefficients {
    pub fn compute(op: &KroneckerOperator, cs: &[Factor], ds: &[Factor]) -> Result<Self> {
        check_factors(op, cs, ds)?;
        let (c, _) = SideCoefficients::compute(op.right_factors(), cs)?;
        let (d, _) = SideCoefficients::compute(op.left_factors(), ds)?;
        Ok(Self::from_sides(c, d))
    }

    fn from_sides(c: SideCoefficients, d: SideCoefficients) -> Self {
        Self {
            beta: c.quad,
            delta: c.lin,
            alpha: d.quad,
            gamma: d.lin,
        }
    }
}

/// Signature of a residual evaluation from coefficients; returns the
/// squared residual.
pub type ResidualFormula = fn(&AlsCoefficients, usize) -> f64;

/// `||I - M P||_F^2 = nm - 2 sum_k c_k·d_k + sum_kl <a_kl, b_kl>_F`. Loses
/// accuracy below about `sqrt(eps) * sqrt(nm)`.
pub fn residual_squared(c: &AlsCoefficients, nm: usize) -> f64 {
    let mut cross = 0.0;
    for (g, d) in c.gamma.iter().zip(&c.delta) {
        cross += g.iter().zip(d).map(|(x, y)| x * y).sum::<f64>();
    }
    let mut quad = 0.0;
    for (ak, bk) in c.alpha.iter().zip(&c.beta) {
        for (a, b) in ak.iter().zip(bk) {
            quad += a.dot(b);
        }
    }
    nm as f64 - 2.0 * cross + quad
}

/// `C_1 = I`, `C_s = I + eta E_s` with `eta = 1e-3 sqrt(n)` and distinct
/// single-entry perturbations `E_s`: at column-major position `s-1`, or at
/// the `(s-1)`-th allowed entry of `pattern` in column-major order (the same
/// positions for a full pattern).
pub fn default_init(size: usize, q: usize, pattern: Option<&SparsityPattern>) -> Result<Vec<Factor>> {
    let Some(pattern) = pattern else {
        return Ok(crate::nkp::default_init(size, q));
    };
    if q > pattern.nnz() + 1 {
        return Err(Error::Argument(format!(
            "pattern with {} entries cannot seed {q} independent factors",
            pattern.nnz()
        )));
    }
    let eta = 1e-3 * (size as f64).sqrt();
    let positions: Vec<(usize, usize)> = (0..size)
        .flat_map(|j| pattern.column(j).iter().map(move |&i| (i, j)))
        .take(q.saturating_sub(1))
        .collect();
    let identity = pattern.project(&Factor::identity(size))?;
    let mut out = vec![Factor::Sparse(identity.clone())];
    for &(i, j) in &positions {
        let e = SparseMatrix::from_triplets(size, size, &[(i, j, eta)])?;
        let sum = SparseMatrix::linear_combination(&[1.0, 1.0], &[&identity, &e])?;
        out.push(Factor::Sparse(pattern.project(&Factor::Sparse(sum))?));
    }
    Ok(out)
}

/// Dense-factor ALS (the unconstrained problem).
pub fn kinv_als(op: &KroneckerOperator, q: usize, opts: &KinvOptions) -> Result<KronInverse> {
    run(op, q, None, opts)
}

/// ALS with `C_s` restricted to `pattern_c` and `D_s` to `pattern_d`.
pub fn kinv_sparse_als(
    op: &KroneckerOperator,
    q: usize,
    pattern_c: &SparsityPattern,
    pattern_d: &SparsityPattern,
    opts: &KinvOptions,
) -> Result<KronInverse> {
    if pattern_c.dim() != op.n() || pattern_d.dim() != op.m() {
        return Err(dim_err(format!(
            "patterns of dimension {}/{} for an operator of size {}/{}",
            pattern_c.dim(),
            pattern_d.dim(),
            op.n(),
            op.m()
        )));
    }
    run(op, q, Some((pattern_c, pattern_d)), opts)
}

struct Side<'a> {
    ops: &'a [Factor],
    products: Option<&'a [Vec<Factor>]>,
    pattern: Option<&'a SparsityPattern>,
    name: &'static str,
}

impl Side<'_> {
    /// Solves for this side's factors given the other side's coefficients.
    fn solve(&self, other: &SideCoefficients, notices: &mut usize) -> Result<Vec<Factor>> {
        let system = NormalSystem::assemble(other, self.ops, self.products)?;
        match self.pattern {
            None => {
                let (f, how) = system.solve_dense(self.name)?;
                if how != SpdSolve::Cholesky {
                    *notices += 1;
                }
                Ok(f)
            }
            Some(p) => {
                let (f, regularized) = system.solve_sparse(p)?;
                *notices += regularized;
                Ok(f)
            }
        }
    }
}

fn pool(threads: Option<usize>) -> Result<ThreadPool> {
    let n = threads.unwrap_or_else(rayon::current_num_threads).max(1);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Argument(format!("cannot start {n} worker threads: {e}")))
}

fn run(
    op: &KroneckerOperator,
    q: usize,
    patterns: Option<(&SparsityPattern, &SparsityPattern)>,
    opts: &KinvOptions,
) -> Result<KronInverse> {
    if q == 0 {
        return Err(Error::Argument("Kronecker rank q must be at least 1".into()));
    }
    let (n, m) = (op.n(), op.m());
    let nm = n * m;
    let tol = opts.tol.unwrap_or(0.1 * (nm as f64).sqrt());
    let (pattern_c, pattern_d) = match patterns {
        Some((c, d)) => (Some(c), Some(d)),
        None => (None, None),
    };
    let init = match &opts.init {
        Some(cs) => cs.clone(),
        None => default_init(n, q, pattern_c)?,
    };
    if init.len() != q || init.iter().any(|c| c.nrows() != n || c.ncols() != n) {
        return Err(dim_err(format!("expected {q} initial factors of size {n}x{n}")));
    }
    if let Some(p) = pattern_c {
        if let Some(s) = init.iter().position(|c| !p.conforms(c)) {
            return Err(Error::Argument(format!("initial factor C_{} violates the C pattern", s + 1)));
        }
    }
    check_independent(&init)?;

    let cached = op.r() <= GRAM_CACHE_MAX_TERMS;
    let cache = cached.then(|| op.gram_cache());
    let right = Side {
        ops: op.right_factors(),
        products: cache.map(|c| c.ata.as_slice()),
        pattern: pattern_c,
        name: "C",
    };
    let left = Side {
        ops: op.left_factors(),
        products: cache.map(|c| c.btb.as_slice()),
        pattern: pattern_d,
        name: "D",
    };

    pool(opts.threads)?.install(|| {
        let mut notices = 0;
        let mut cs = orthonormalize(&init, "C")?;
        let (mut coef_c, _) = SideCoefficients::compute(right.ops, &cs)?;
        let mut history = Vec::new();
        let mut half_history = Vec::new();
        let mut best: Option<(f64, Vec<Factor>, Vec<Factor>)> = None;
        let mut warnings = Vec::new();
        let mut res = f64::INFINITY;
        let mut iterations = 0;
        while res > tol && iterations < opts.max_iter {
            let ds = left.solve(&coef_c, &mut notices)?;
            let (coef_d, _) = SideCoefficients::compute(left.ops, &ds)?;
            let half = AlsCoefficients::from_sides(coef_c.clone(), coef_d);
            half_history.push(residual_squared(&half, nm).max(0.0).sqrt());
            // the C-step depends on D only through its span
            let ds = orthonormalize(&ds, "D")?;
            let (coef_d, _) = SideCoefficients::compute(left.ops, &ds)?;

            cs = right.solve(&coef_d, &mut notices)?;
            coef_c = SideCoefficients::compute(right.ops, &cs)?.0;
            let full = AlsCoefficients::from_sides(coef_c.clone(), coef_d);
            res = residual_squared(&full, nm).max(0.0).sqrt();
            history.push(res);
            iterations += 1;
            if best.as_ref().is_none_or(|b| res < b.0) {
                best = Some((res, cs.clone(), ds));
            }
            cs = orthonormalize(&cs, "C")?;
            coef_c = SideCoefficients::compute(right.ops, &cs)?.0;
            let w = opts.stagnation_window;
            if w > 0 && history.len() > w && res > tol {
                let old = history[history.len() - 1 - w];
                if old - res <= STAGNATION_RATIO * old {
                    warnings.push(format!(
                        "residual stagnated over {w} iterations ({old:.6e} -> {res:.6e}); best iterate returned"
                    ));
                    break;
                }
            }
        }
        if notices > 0 {
            warnings.push(format!(
                "{notices} normal-equation solve(s) needed regularization or the LU fallback"
            ));
        }
        let (best_res, cs, ds) = best.expect("at least one iteration");
        let mut out = KronInverse {
            cs,
            ds,
            pattern_c: pattern_c.cloned(),
            pattern_d: pattern_d.cloned(),
            final_residual: best_res,
            history,
            half_history,
            iterations,
            converged: best_res <= tol,
            warnings,
        };
        out.final_residual = out.residual(op)?;
        Ok(out)
    })
}

fn check_factors(op: &KroneckerOperator, cs: &[Factor], ds: &[Factor]) -> Result<()> {
    if cs.len() != ds.len() || cs.is_empty() {
        return Err(Error::Argument("need the same positive number of C and D factors".into()));
    }
    let (n, m) = (op.n(), op.m());
    if cs.iter().any(|c| c.nrows() != n || c.ncols() != n) || ds.iter().any(|d| d.nrows() != m || d.ncols() != m) {
        return Err(dim_err(format!("factors must be {n}x{n} (C) and {m}x{m} (D)")));
    }
    Ok(())
}

/// Frobenius-orthonormal basis of the span of `fs` (modified Gram–Schmidt,
/// two passes). Sparse factors with a common structure keep it.
fn orthonormalize(fs: &[Factor], name: &'static str) -> Result<Vec<Factor>> {
    let mut out: Vec<Factor> = Vec::with_capacity(fs.len());
    for f in fs {
        let norm0 = f.frobenius_norm();
        let mut v = f.clone();
        for _ in 0..2 {
            for u in &out {
                let c = u.frobenius(&v);
                v = Factor::linear_combination(&[1.0, -c], &[&v, u])?;
            }
        }
        let norm = v.frobenius_norm();
        if !(norm > 1e-12 * norm0) {
            return Err(Error::DependentFactors { name });
        }
        out.push(v.scale(1.0 / norm));
    }
    Ok(out)
}

/// Rejects numerically dependent initial factors via the normalized Gram
/// matrix.
fn check_independent(cs: &[Factor]) -> Result<()> {
    let refs: Vec<&Factor> = cs.iter().collect();
    let g = gram(&refs);
    let d: Vec<f64> = (0..g.nrows()).map(|i| g[(i, i)].sqrt()).collect();
    if d.contains(&0.0) {
        return Err(Error::DependentFactors { name: "C" });
    }
    let normalized = DenseMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)] / (d[i] * d[j]));
    let eig = normalized.symmetric_eigenvalues();
    if eig.min() <= 1e-12 {
        return Err(Error::DependentFactors { name: "C" });
    }
    Ok(())
}

impl KronInverse {
    pub fn q(&self) -> usize {
        self.cs.len()
    }

    /// `P = I ⊗ I` as a rank-one inverse.
    pub fn identity(n: usize, m: usize) -> Self {
        Self {
            cs: vec![Factor::identity(n)],
            ds: vec![Factor::identity(m)],
            pattern_c: None,
            pattern_d: None,
            final_residual: f64::NAN,
            history: Vec::new(),
            half_history: Vec::new(),
            iterations: 0,
            converged: false,
            warnings: Vec::new(),
        }
    }

    /// `P(R) = sum_s D_s R C_s^T`.
    pub fn apply(&self, r: &DenseMatrix) -> Result<DenseMatrix> {
        let (m, n) = (self.ds[0].nrows(), self.cs[0].nrows());
        if r.shape() != (m, n) {
            return Err(dim_err(format!("KINV expects a {m}x{n} argument, got {:?}", r.shape())));
        }
        let mut y = DenseMatrix::zeros(m, n);
        for (c, d) in self.cs.iter().zip(&self.ds) {
            d.sandwich_acc(r, c, 1.0, &mut y);
        }
        Ok(y)
    }

    /// Every factor replaced by its symmetric part; patterns follow the new
    /// structure.
    pub fn symmetrize(&self) -> KronInverse {
        let sym = |fs: &[Factor]| fs.iter().map(Factor::symmetric_part).collect::<Vec<_>>();
        let cs = sym(&self.cs);
        let ds = sym(&self.ds);
        let pat = |p: &Option<SparsityPattern>, f: &Factor| match (p, f) {
            (Some(_), Factor::Sparse(s)) => SparsityPattern::from_structure(s).ok(),
            _ => None,
        };
        KronInverse {
            pattern_c: pat(&self.pattern_c, &cs[0]),
            pattern_d: pat(&self.pattern_d, &ds[0]),
            cs,
            ds,
            final_residual: f64::NAN,
            history: self.history.clone(),
            half_history: self.half_history.clone(),
            iterations: self.iterations,
            converged: false,
            warnings: self.warnings.clone(),
        }
    }

    /// `||I - M P||_F` from thin QR factors of `[vec I, vec A_k C_s]` and
    /// `[vec I, vec B_k D_s]`; accurate down to roundoff, unlike the
    /// coefficient formula.
    pub fn residual(&self, op: &KroneckerOperator) -> Result<f64> {
        check_factors(op, &self.cs, &self.ds)?;
        let mut left = vec![Factor::identity(op.n())];
        let mut right = vec![Factor::identity(op.m())];
        let mut coeffs = vec![1.0];
        for (a, b) in op.right_factors().iter().zip(op.left_factors()) {
            for (c, d) in self.cs.iter().zip(&self.ds) {
                left.push(a.matmul(c)?);
                right.push(b.matmul(d)?);
                coeffs.push(-1.0);
            }
        }
        let l: Vec<&Factor> = left.iter().collect();
        let r: Vec<&Factor> = right.iter().collect();
        Ok(kron_sum_norm(&l, &r, &coeffs))
    }

    /// Residual from the coefficient formula.
    pub fn formula_residual(&self, op: &KroneckerOperator) -> Result<f64> {
        let c = AlsCoefficients::compute(op, &self.cs, &self.ds)?;
        Ok(residual_squared(&c, op.n() * op.m()).max(0.0).sqrt())
    }
}

impl Preconditioner for KronInverse {
    fn apply(&self, r: &DenseMatrix) -> Result<DenseMatrix> {
        KronInverse::apply(self, r)
    }

    fn kind(&self) -> PrecondKind {
        PrecondKind::Kinv
    }

    fn bandwidth(&self) -> Option<usize> {
        crate::krylov::pair_bandwidth(&self.cs, &self.ds).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::inverse;
    use crate::operator::MATERIALIZE_CAP;
    use crate::testing;

    fn kronecker(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        a.kronecker(b)
    }

    fn materialized_residual(op: &KroneckerOperator, k: &KronInverse) -> f64 {
        let m = op.materialize(MATERIALIZE_CAP).unwrap();
        let p = KroneckerOperator::new(k.cs.clone(), k.ds.clone())
            .unwrap()
            .materialize(MATERIALIZE_CAP)
            .unwrap();
        let nm = m.nrows();
        (DenseMatrix::identity(nm, nm) - m * p).norm()
    }

    fn tight(max_iter: usize) -> KinvOptions {
        KinvOptions {
            tol: Some(1e-13),
            max_iter,
            ..Default::default()
        }
    }

    fn tridiag(n: usize, d: f64, o: f64) -> Factor {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, d));
            if i + 1 < n {
                t.push((i, i + 1, o));
                t.push((i + 1, i, o));
            }
        }
        Factor::Sparse(SparseMatrix::from_triplets(n, n, &t).unwrap())
    }

    #[test]
    fn identity_operator() {
        let op = KroneckerOperator::identity(4, 3);
        let k = kinv_als(&op, 1, &tight(2)).unwrap();
        assert!(k.final_residual <= 1e-12 * 12f64.sqrt());
        // C ⊗ D = I ⊗ I up to reciprocal scaling
        let c = k.cs[0].to_dense();
        let d = k.ds[0].to_dense();
        let scale = c[(0, 0)];
        assert!((c / scale - DenseMatrix::identity(4, 4)).norm() < 1e-12);
        assert!((d * scale - DenseMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn exact_inverse_of_rank_one() {
        let mut rng = testing::rng(7);
        let a = testing::shifted(6, 3.0, &mut rng);
        let b = testing::shifted(6, 3.0, &mut rng);
        let op = KroneckerOperator::new(vec![Factor::Dense(a.clone())], vec![Factor::Dense(b.clone())]).unwrap();
        let k = kinv_als(&op, 1, &tight(3)).unwrap();
        assert!(k.iterations <= 3);
        assert!(k.final_residual <= 1e-8, "{}", k.final_residual);
        let p = kronecker(&k.cs[0].to_dense(), &k.ds[0].to_dense());
        let exact = kronecker(&inverse(&a).unwrap(), &inverse(&b).unwrap());
        assert!((p - &exact).norm() <= 1e-8 * exact.norm());
    }

    #[test]
    fn formula_matches_materialized_residual() {
        let mut rng = testing::rng(11);
        let op = testing::operator(5, 5, 3, &mut rng);
        for q in [1, 2] {
            let k = kinv_als(&op, q, &tight(4)).unwrap();
            let oracle = materialized_residual(&op, &k);
            let formula = k.formula_residual(&op).unwrap();
            assert!((formula - oracle).abs() <= 1e-10 * oracle, "q={q}: {formula} vs {oracle}");
            assert!((k.final_residual - oracle).abs() <= 1e-12 * oracle);
        }
    }

    #[test]
    fn coefficient_paths_agree() {
        let mut rng = testing::rng(3);
        let op = testing::operator(4, 3, 3, &mut rng);
        let cs: Vec<Factor> = (0..2).map(|_| Factor::Dense(testing::dense(4, 4, &mut rng))).collect();
        let ds: Vec<Factor> = (0..2).map(|_| Factor::Dense(testing::dense(3, 3, &mut rng))).collect();
        let c = AlsCoefficients::compute(&op, &cs, &ds).unwrap();
        let a = op.right_factors();
        for k in 0..3 {
            for l in 0..3 {
                let ata = a[k].to_dense().transpose() * a[l].to_dense();
                for s in 0..2 {
                    for t in 0..2 {
                        let cct = cs[s].to_dense() * cs[t].to_dense().transpose();
                        let v = ata.dot(&cct);
                        assert!((c.beta[k][l][(s, t)] - v).abs() <= 1e-12 * v.abs().max(1.0));
                    }
                }
            }
            for s in 0..2 {
                let v = a[k].to_dense().transpose().dot(&cs[s].to_dense());
                assert!((c.delta[k][s] - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
        // beta_kl = beta_lk^T blockwise
        for k in 0..3 {
            for l in 0..3 {
                assert_eq!(c.alpha[k][l], c.alpha[l][k].transpose());
            }
        }
    }

    #[test]
    fn residual_is_monotone() {
        let mut rng = testing::rng(5);
        let op = testing::operator(5, 4, 3, &mut rng);
        let k = kinv_als(&op, 2, &tight(8)).unwrap();
        let mut all = Vec::new();
        for (h, f) in k.half_history.iter().zip(&k.history) {
            all.push(*h);
            all.push(*f);
        }
        for w in all.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{all:?}");
        }
    }

    #[test]
    fn full_patterns_match_dense() {
        let mut rng = testing::rng(9);
        let op = testing::operator(5, 4, 3, &mut rng);
        let opts = tight(4);
        let dense = kinv_als(&op, 2, &opts).unwrap();
        let sparse = kinv_sparse_als(&op, 2, &SparsityPattern::full(5), &SparsityPattern::full(4), &opts).unwrap();
        for (a, b) in dense.cs.iter().chain(&dense.ds).zip(sparse.cs.iter().chain(&sparse.ds)) {
            let (a, b) = (a.to_dense(), b.to_dense());
            assert!((&a - b).norm() <= 1e-10 * a.norm());
        }
    }

    #[test]
    fn diagonal_patterns_on_identity() {
        let op = KroneckerOperator::identity(5, 4);
        let k = kinv_sparse_als(&op, 1, &SparsityPattern::diagonal(5), &SparsityPattern::diagonal(4), &tight(2)).unwrap();
        assert!(k.final_residual <= 1e-12 * 20f64.sqrt());
        assert!(k.cs[0].is_sparse() && k.ds[0].is_sparse());
        assert_eq!(Preconditioner::bandwidth(&k), Some(0));
    }

    #[test]
    fn larger_pattern_gives_smaller_residual() {
        let n = 12;
        let op = KroneckerOperator::new(
            vec![tridiag(n, 2.0, -1.0), Factor::identity(n)],
            vec![Factor::identity(n), tridiag(n, 3.0, -1.0)],
        )
        .unwrap();
        let fit = |power| {
            let spec = PatternSpec { power, density_cap: 1.0, ..Default::default() };
            let pc = build_pattern(&op, crate::Side::Right, &spec).unwrap().pattern;
            let pd = build_pattern(&op, crate::Side::Left, &spec).unwrap().pattern;
            let k = kinv_sparse_als(&op, 2, &pc, &pd, &tight(6)).unwrap();
            assert!(pc.conforms(&k.cs[0]) && pd.conforms(&k.ds[1]));
            k.formula_residual(&op).unwrap()
        };
        let (r0, r2) = (fit(0), fit(2));
        assert!(r2 < r0, "{r2} !< {r0}");
    }

    #[test]
    fn sparse_step_is_constrained_least_squares() {
        // one D-step against a dense least-squares solve over the pattern entries
        let mut rng = testing::rng(21);
        let (n, m, q) = (3, 4, 2);
        let op = testing::operator(n, m, 2, &mut rng);
        let cs: Vec<Factor> = (0..q).map(|_| Factor::Dense(testing::dense(n, n, &mut rng))).collect();
        let pd = SparsityPattern::from_structure(&tridiag(m, 1.0, 1.0).to_sparse()).unwrap();
        let (coef, _) = SideCoefficients::compute(op.right_factors(), &cs).unwrap();
        let system = NormalSystem::assemble(&coef, op.left_factors(), None).unwrap();
        let (ds, _) = system.solve_sparse(&pd).unwrap();

        let unknowns: Vec<(usize, usize, usize)> = (0..q)
            .flat_map(|s| {
                let pd = &pd;
                (0..m).flat_map(move |j| pd.column(j).iter().map(move |&i| (s, i, j)))
            })
            .collect();
        let nm = n * m;
        let mut design = DenseMatrix::zeros(nm * nm, unknowns.len());
        for (col, &(s, i, j)) in unknowns.iter().enumerate() {
            let mut e = DenseMatrix::zeros(m, m);
            e[(i, j)] = 1.0;
            let mut term = DenseMatrix::zeros(nm, nm);
            for (a, b) in op.right_factors().iter().zip(op.left_factors()) {
                term += kronecker(&(a.to_dense() * cs[s].to_dense()), &(b.to_dense() * &e));
            }
            design.column_mut(col).copy_from_slice(term.as_slice());
        }
        let target = DenseMatrix::identity(nm, nm);
        let rhs = nalgebra::DVector::from_column_slice(target.as_slice());
        let sol = design.svd(true, true).solve(&rhs, 1e-14).unwrap();
        for (col, &(s, i, j)) in unknowns.iter().enumerate() {
            assert!((ds[s].get(i, j) - sol[col]).abs() <= 1e-9 * sol.amax(), "({s},{i},{j})");
        }
    }

    #[test]
    fn thread_count_does_not_change_factors() {
        let n = 30;
        let op = KroneckerOperator::new(
            vec![tridiag(n, 2.0, -1.0), Factor::identity(n), tridiag(n, 0.5, 0.2)],
            vec![Factor::identity(n), tridiag(n, 3.0, -1.0), tridiag(n, 1.0, 0.3)],
        )
        .unwrap();
        let spec = PatternSpec { power: 2, ..Default::default() };
        let pc = build_pattern(&op, crate::Side::Right, &spec).unwrap().pattern;
        let pd = build_pattern(&op, crate::Side::Left, &spec).unwrap().pattern;
        let run = |threads| {
            let opts = KinvOptions { threads: Some(threads), ..tight(3) };
            kinv_sparse_als(&op, 2, &pc, &pd, &opts).unwrap()
        };
        let (a, b) = (run(1), run(4));
        for (x, y) in a.cs.iter().chain(&a.ds).zip(b.cs.iter().chain(&b.ds)) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn dependent_init_is_rejected() {
        let op = KroneckerOperator::identity(3, 3);
        let opts = KinvOptions {
            init: Some(vec![Factor::identity(3), Factor::identity(3).scale(2.0)]),
            ..Default::default()
        };
        assert!(matches!(kinv_als(&op, 2, &opts), Err(Error::DependentFactors { name: "C" })));
    }

    #[test]
    fn apply_conventions() {
        let mut rng = testing::rng(2);
        let r = testing::dense(3, 4, &mut rng);
        let id = KronInverse::identity(4, 3);
        assert_eq!(id.apply(&r).unwrap(), r);

        let c = Factor::Dense(testing::dense(4, 4, &mut rng));
        let d = Factor::Dense(testing::dense(3, 3, &mut rng));
        let mut one = KronInverse::identity(4, 3);
        one.cs = vec![c.clone()];
        one.ds = vec![d.clone()];
        let mut two = one.clone();
        two.cs.push(Factor::Dense(DenseMatrix::zeros(4, 4)));
        two.ds.push(Factor::Dense(DenseMatrix::zeros(3, 3)));
        assert_eq!(one.apply(&r).unwrap(), two.apply(&r).unwrap());

        let p = KroneckerOperator::new(vec![c], vec![d]).unwrap().materialize(MATERIALIZE_CAP).unwrap();
        let v = p * nalgebra::DVector::from_column_slice(r.as_slice());
        let y = one.apply(&r).unwrap();
        assert!((nalgebra::DVector::from_column_slice(y.as_slice()) - &v).norm() <= 1e-12 * v.norm());
        assert!(one.apply(&DenseMatrix::zeros(4, 3)).is_err());
    }

    #[test]
    fn symmetrize_fixed_point_and_skew() {
        let mut k = KronInverse::identity(3, 3);
        let s = k.symmetrize();
        assert_eq!(s.cs[0].to_dense(), DenseMatrix::identity(3, 3));
        let skew = DenseMatrix::from_row_slice(3, 3, &[0.0, 1.0, -2.0, -1.0, 0.0, 3.0, 2.0, -3.0, 0.0]);
        k.cs = vec![Factor::Dense(skew)];
        assert_eq!(k.symmetrize().cs[0].to_dense(), DenseMatrix::zeros(3, 3));
    }
}
