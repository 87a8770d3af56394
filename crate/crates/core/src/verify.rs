//! Self-check suite comparing the structured algorithms against the dense
//! reference implementations in [`crate::oracle`].
//!
//! Every check is deterministic for a given seed. Checks whose instances would
//! exceed the size cap are reported as skipped.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Result, Side};
use crate::kinv::{
    build_pattern, kinv_als, kinv_sparse_als, residual_squared, AlsCoefficients, KinvOptions, PatternSpec,
    PatternVariant, ResidualFormula,
};
use crate::krylov::{bandwidth_audit, bicgstab, gmres, IdentityPreconditioner, Preconditioner, SolverOptions};
use crate::matrix::{vectorize, DenseMatrix, Factor, SparseMatrix};
use crate::nkp::{nkp_als, nkp_svd, spectral_diagnostics, AlsOptions};
use crate::operator::KroneckerOperator;
use crate::oracle;
use crate::problems::{circuit, convection_diffusion, synthetic_banded};

/// Default materialization cap (`n·m`).
pub const DEFAULT_SIZE_CAP: usize = 4096;

/// Soft runtime budget of the whole suite, in seconds.
pub const RUNTIME_BUDGET: f64 = 60.0;

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub size_cap: usize,
    pub seed: u64,
    /// Squared KINV residual from coefficients; replaceable to test that the
    /// suite notices a wrong formula.
    pub residual_formula: ResidualFormula,
    pub threads: Option<usize>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            size_cap: DEFAULT_SIZE_CAP,
            seed: 12345,
            residual_formula: residual_squared,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
    pub warnings: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Pass flag and a human-readable detail line.
type Outcome = Result<(bool, String)>;

type CheckFn = fn(&VerifyOptions) -> Outcome;

/// Name, largest `n·m` involved, body.
const CHECKS: &[(&str, usize, CheckFn)] = &[
    ("materialization", 144, check_materialization),
    ("svd_optimality", 36, check_svd_optimality),
    ("als_properties", 36, check_als_properties),
    ("kinv_residual_identity", 25, check_kinv_residual_identity),
    ("kinv_exact_inverse", 20, check_kinv_exact_inverse),
    ("nkp_structure", 49, check_nkp_structure),
    ("spectral_sandwich", 64, check_spectral_sandwich),
    ("bandwidth_growth", 3000, check_bandwidth_growth),
    ("vec_equivalence_gmres", 80, check_vec_gmres),
    ("vec_equivalence_bicgstab", 80, check_vec_bicgstab),
    ("parallel_determinism", 3000, check_parallel_determinism),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.0).collect()
}

/// Runs every check.
pub fn run_suite(opts: &VerifyOptions) -> VerifyReport {
    run_selected(opts, &check_names())
}

/// Runs the named checks, in suite order.
pub fn run_selected(opts: &VerifyOptions, names: &[&str]) -> VerifyReport {
    let start = Instant::now();
    let mut checks = Vec::new();
    for &(name, size, body) in CHECKS.iter().filter(|c| names.contains(&c.0)) {
        let t = Instant::now();
        let (status, detail) = if size > opts.size_cap {
            (Status::Skip, format!("needs n·m = {size} above the cap {}", opts.size_cap))
        } else {
            match body(opts) {
                Ok((true, d)) => (Status::Pass, d),
                Ok((false, d)) => (Status::Fail, d),
                Err(e) => (Status::Fail, format!("error: {e}")),
            }
        };
        checks.push(CheckResult {
            name,
            status,
            detail,
            seconds: t.elapsed().as_secs_f64(),
        });
    }
    let seconds = start.elapsed().as_secs_f64();
    let mut warnings = Vec::new();
    if seconds > RUNTIME_BUDGET {
        warnings.push(format!("suite took {seconds:.1} s, above the {RUNTIME_BUDGET} s budget"));
    }
    VerifyReport {
        checks,
        seconds,
        warnings,
    }
}

fn rng_for(opts: &VerifyOptions, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x9E37_79B9).wrapping_add(salt))
}

fn rand_dense(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn rand_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let a = rand_dense(n, n, rng);
    (&a + a.transpose()) * 0.5
}

fn rand_spd(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let a = rand_dense(n, n, rng);
    &a * a.transpose() + DenseMatrix::identity(n, n) * 0.5
}

fn rand_banded(n: usize, band: usize, rng: &mut ChaCha8Rng) -> Result<SparseMatrix> {
    let mut t = Vec::new();
    for j in 0..n {
        for i in j.saturating_sub(band)..(j + band + 1).min(n) {
            t.push((i, j, rng.gen_range(-1.0..1.0)));
        }
    }
    SparseMatrix::from_triplets(n, n, &t)
}

fn rand_operator(n: usize, m: usize, r: usize, rng: &mut ChaCha8Rng) -> Result<KroneckerOperator> {
    let a = (0..r).map(|_| Factor::Dense(rand_dense(n, n, rng))).collect();
    let b = (0..r).map(|_| Factor::Dense(rand_dense(m, m, rng))).collect();
    KroneckerOperator::new(a, b)
}

/// Random operator whose first term is a well-conditioned dominant pair.
fn rand_nonsingular(n: usize, m: usize, r: usize, rng: &mut ChaCha8Rng) -> Result<KroneckerOperator> {
    let mut a = vec![Factor::Dense(rand_dense(n, n, rng) * 0.3 + DenseMatrix::identity(n, n) * 3.0)];
    let mut b = vec![Factor::Dense(rand_dense(m, m, rng) * 0.3 + DenseMatrix::identity(m, m) * 2.0)];
    for _ in 1..r {
        a.push(Factor::Dense(rand_dense(n, n, rng) * 0.5));
        b.push(Factor::Dense(rand_dense(m, m, rng) * 0.5));
    }
    KroneckerOperator::new(a, b)
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn check_materialization(opts: &VerifyOptions) -> Outcome {
    let mut rng = rng_for(opts, 1);
    let mut ops = vec![rand_operator(5, 4, 3, &mut rng)?];
    ops.push(circuit(3)?.operator);
    ops.push(convection_diffusion(6, 0.1)?.operator);
    ops.push(synthetic_banded(7, 9, 3, 2, opts.seed, false)?.operator);
    let mut worst: f64 = 0.0;
    for op in &ops {
        let mat = op.materialize(opts.size_cap)?;
        let x = rand_dense(op.m(), op.n(), &mut rng);
        let y = op.apply(&x)?;
        let yv = &mat * DenseMatrix::from_column_slice(x.len(), 1, vectorize(&x));
        let diff = (DenseMatrix::from_column_slice(y.len(), 1, vectorize(&y)) - &yv).norm();
        worst = worst.max(diff / yv.norm().max(1.0));
    }
    Ok((worst <= 1e-12, format!("max relative difference {worst:.2e} over {} operators", ops.len())))
}

fn svd_instances(opts: &VerifyOptions) -> Result<Vec<KroneckerOperator>> {
    let mut rng = rng_for(opts, 2);
    (0..20).map(|_| rand_operator(6, 6, 4, &mut rng)).collect()
}

fn check_svd_optimality(opts: &VerifyOptions) -> Outcome {
    let mut worst: f64 = 0.0;
    for op in svd_instances(opts)? {
        let mat = op.materialize(opts.size_cap)?;
        for q in [1, 2] {
            let approx = nkp_svd(&op, q)?;
            let tail = oracle::svd_tail(&mat, op.n(), op.m(), q)?;
            let direct = (&mat - approx.to_operator()?.materialize(opts.size_cap)?).norm();
            worst = worst.max(rel_diff(approx.error, tail)).max(rel_diff(direct, tail));
        }
    }
    Ok((worst <= 1e-11, format!("max relative deviation from the SVD tail {worst:.2e}")))
}

fn check_als_properties(opts: &VerifyOptions) -> Outcome {
    let mut worst_increase: f64 = 0.0;
    let mut worst_gap = f64::INFINITY;
    for op in svd_instances(opts)? {
        let mat = op.materialize(opts.size_cap)?;
        for q in [1, 2] {
            let als = nkp_als(&op, q, &AlsOptions { tol: Some(0.0), max_iter: 15, init: None })?;
            let scale = als.history.first().copied().unwrap_or(1.0).max(f64::MIN_POSITIVE);
            for w in als.history.windows(2) {
                worst_increase = worst_increase.max((w[1] - w[0]) / scale);
            }
            let tail = oracle::svd_tail(&mat, op.n(), op.m(), q)?;
            worst_gap = worst_gap.min(als.error - tail);
        }
    }
    let ok = worst_increase <= 1e-12 && worst_gap >= -1e-10;
    Ok((
        ok,
        format!("largest relative increase {worst_increase:.2e}, smallest gap to the optimum {worst_gap:.2e}"),
    ))
}

fn kinv_materialized_residual(op: &KroneckerOperator, cs: &[Factor], ds: &[Factor], cap: usize) -> Result<f64> {
    let mat = op.materialize(cap)?;
    let p = KroneckerOperator::new(cs.to_vec(), ds.to_vec())?.materialize(cap)?;
    let size = mat.nrows();
    Ok((DenseMatrix::identity(size, size) - mat * p).norm())
}

fn check_kinv_residual_identity(opts: &VerifyOptions) -> Outcome {
    let mut rng = rng_for(opts, 3);
    let mut worst: f64 = 0.0;
    let kopts = KinvOptions {
        tol: Some(0.0),
        max_iter: 3,
        threads: opts.threads,
        ..Default::default()
    };
    for q in [1, 2] {
        let dense_op = rand_operator(5, 5, 3, &mut rng)?;
        let a = (0..3).map(|_| rand_banded(5, 1, &mut rng).map(Factor::Sparse)).collect::<Result<_>>()?;
        let b = (0..3).map(|_| rand_banded(5, 1, &mut rng).map(Factor::Sparse)).collect::<Result<_>>()?;
        let sparse_op = KroneckerOperator::new(a, b)?;
        let spec = PatternSpec {
            variant: PatternVariant::Plain,
            power: 1,
            density_cap: 1.0,
        };
        let pc = build_pattern(&sparse_op, Side::Right, &spec)?.pattern;
        let pd = build_pattern(&sparse_op, Side::Left, &spec)?.pattern;
        let runs = [
            (&dense_op, kinv_als(&dense_op, q, &kopts)?),
            (&sparse_op, kinv_sparse_als(&sparse_op, q, &pc, &pd, &kopts)?),
        ];
        for (op, k) in runs {
            let coeffs = AlsCoefficients::compute(op, &k.cs, &k.ds)?;
            let formula = (opts.residual_formula)(&coeffs, op.n() * op.m()).max(0.0).sqrt();
            let direct = kinv_materialized_residual(op, &k.cs, &k.ds, opts.size_cap)?;
            worst = worst.max(rel_diff(formula, direct));
        }
    }
    Ok((worst <= 1e-10, format!("max relative deviation from the materialized residual {worst:.2e}")))
}

fn check_kinv_exact_inverse(opts: &VerifyOptions) -> Outcome {
    let mut rng = rng_for(opts, 4);
    let a = rand_dense(5, 5, &mut rng) + DenseMatrix::identity(5, 5) * 3.0;
    let b = rand_dense(4, 4, &mut rng) + DenseMatrix::identity(4, 4) * 3.0;
    let op = KroneckerOperator::new(vec![Factor::Dense(a)], vec![Factor::Dense(b)])?;
    let k = kinv_als(
        &op,
        1,
        &KinvOptions {
            tol: Some(1e-8),
            max_iter: 3,
            threads: opts.threads,
            ..Default::default()
        },
    )?;
    let direct = kinv_materialized_residual(&op, &k.cs, &k.ds, opts.size_cap)?;
    let ok = k.iterations <= 3 && direct <= 1e-8 && k.final_residual <= 1e-8;
    Ok((
        ok,
        format!("residual {direct:.2e} after {} iterations", k.iterations),
    ))
}

fn union_structure(fs: &[Factor]) -> std::collections::BTreeSet<(usize, usize)> {
    fs.iter().flat_map(Factor::sparsity).collect()
}

fn check_nkp_structure(opts: &VerifyOptions) -> Outcome {
    let mut rng = rng_for(opts, 5);
    let mut failures = Vec::new();
    for inst in 0..50 {
        let n = rng.gen_range(3..=7);
        let m = rng.gen_range(3..=7);
        let r = rng.gen_range(2..=5);
        let q = rng.gen_range(1..=r.min(3));
        let symmetric = inst % 2 == 0;
        let op = if symmetric {
            let a = (0..r).map(|_| Factor::Dense(rand_symmetric(n, &mut rng))).collect();
            let b = (0..r).map(|_| Factor::Dense(rand_symmetric(m, &mut rng))).collect();
            KroneckerOperator::new(a, b)?
        } else {
            let a = (0..r)
                .map(|_| rand_banded(n, rng.gen_range(0..=2), &mut rng).map(Factor::Sparse))
                .collect::<Result<_>>()?;
            let b = (0..r)
                .map(|_| rand_banded(m, rng.gen_range(0..=2), &mut rng).map(Factor::Sparse))
                .collect::<Result<_>>()?;
            KroneckerOperator::new(a, b)?
        };
        let ua = union_structure(op.right_factors());
        let ub = union_structure(op.left_factors());
        let approxes = [nkp_svd(&op, q)?, nkp_als(&op, q, &AlsOptions::default())?];
        for (route, ap) in ["svd", "als"].iter().zip(&approxes) {
            for (y, z) in ap.ys.iter().zip(&ap.zs) {
                if symmetric {
                    for f in [y, z] {
                        let d = f.to_dense();
                        if (&d - d.transpose()).norm() > 1e-12 * d.norm().max(1.0) {
                            failures.push(format!("instance {inst} ({route}): factor not symmetric"));
                        }
                    }
                }
                let sy: Vec<_> = y.sparsity();
                let sz: Vec<_> = z.sparsity();
                if !sy.iter().all(|p| ua.contains(p)) || !sz.iter().all(|p| ub.contains(p)) {
                    failures.push(format!("instance {inst} ({route}): factor leaves the operator pattern"));
                }
            }
        }
    }
    Ok(match failures.first() {
        None => (true, "50 instances, both routes".into()),
        Some(f) => (false, format!("{} violations, first: {f}", failures.len())),
    })
}

fn check_spectral_sandwich(opts: &VerifyOptions) -> Outcome {
    let mut rng = rng_for(opts, 6);
    let mut done = 0;
    let mut failures = Vec::new();
    let mut worst_eig: f64 = 0.0;
    while done < 20 {
        let n = rng.gen_range(3..=8);
        let m = rng.gen_range(3..=8);
        let a = (0..3).map(|_| Factor::Dense(rand_spd(n, &mut rng))).collect();
        let b = (0..3).map(|_| Factor::Dense(rand_spd(m, &mut rng))).collect();
        let op = KroneckerOperator::new(a, b)?;
        let approx = nkp_svd(&op, 1)?;
        let rep = match spectral_diagnostics(&op, &approx) {
            Ok(r) => r,
            // a q = 1 approximation of an SPD sum need not be definite
            Err(crate::Error::Inapplicable(_)) => continue,
            Err(e) => return Err(e),
        };
        let mat = op.materialize(opts.size_cap)?;
        let mt = approx.to_operator()?.materialize(opts.size_cap)?;
        let ev = oracle::pencil_eigenvalues(&mat, &mt)?;
        for (x, y) in ev.iter().zip(&rep.eigenvalues) {
            worst_eig = worst_eig.max(rel_diff(*x, *y));
        }
        let spec = nalgebra::SymmetricEigen::new(mat.clone()).eigenvalues;
        let kappa = spec.max() / spec.min();
        let rel = (&mat - &mt).norm() / mat.norm();
        let middle = (ev.iter().map(|l| (1.0 - 1.0 / l).powi(2)).sum::<f64>() / ev.len() as f64).sqrt();
        let slack = 1e-10 * (1.0 + kappa * rel);
        if !(rel / kappa <= middle + slack && middle <= kappa * rel + slack) || !rep.holds {
            failures.push(format!("instance {done}: {:.3e} <= {middle:.3e} <= {:.3e}", rel / kappa, kappa * rel));
        }
        done += 1;
    }
    let ok = failures.is_empty() && worst_eig <= 1e-8;
    Ok((
        ok,
        match failures.first() {
            None => format!("20 instances, eigenvalue agreement {worst_eig:.2e}"),
            Some(f) => format!("{} violations, first: {f}", failures.len()),
        },
    ))
}

fn check_bandwidth_growth(opts: &VerifyOptions) -> Outcome {
    let inst = synthetic_banded(60, 50, 3, 1, opts.seed, false)?;
    let spec = PatternSpec {
        variant: PatternVariant::Plain,
        power: 1,
        density_cap: 1.0,
    };
    let pc = build_pattern(&inst.operator, Side::Right, &spec)?.pattern;
    let pd = build_pattern(&inst.operator, Side::Left, &spec)?.pattern;
    let k = kinv_sparse_als(
        &inst.operator,
        2,
        &pc,
        &pd,
        &KinvOptions {
            threads: opts.threads,
            ..Default::default()
        },
    )?;
    let rep = bicgstab(
        &inst.operator,
        &k,
        &inst.rhs,
        &SolverOptions {
            tol: 1e-300,
            max_iter: 5,
            record_bandwidth: true,
            ..Default::default()
        },
    )?;
    let audit = bandwidth_audit(&rep.history, &inst.operator, &k, &inst.rhs)?;
    let rows: Vec<String> = audit
        .rows
        .iter()
        .map(|r| format!("j={}: {}<={}", r.iteration, r.observed, r.bound))
        .collect();
    let ok = audit.holds && audit.rows.len() == 5;
    Ok((ok, rows.join(", ")))
}

fn vec_instances(opts: &VerifyOptions) -> Result<Vec<KroneckerOperator>> {
    let mut rng = rng_for(opts, 7);
    Ok(vec![rand_nonsingular(6, 6, 3, &mut rng)?, rand_nonsingular(8, 10, 4, &mut rng)?])
}

/// Largest relative iterate difference and whether the iterate counts match.
fn compare_iterates(structured: &[DenseMatrix], reference: &[nalgebra::DVector<f64>]) -> Result<(f64, bool)> {
    let mut worst: f64 = 0.0;
    for (x, v) in structured.iter().zip(reference) {
        let xv = oracle::as_matrix(v, x.nrows(), x.ncols())?;
        worst = worst.max((x - &xv).norm() / xv.norm().max(1.0));
    }
    Ok((worst, structured.len() == reference.len()))
}

fn vec_check(opts: &VerifyOptions, gmres_like: bool) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut counts_match = true;
    let mut steps = 0;
    for op in vec_instances(opts)? {
        let mut rng = rng_for(opts, 8);
        let e = rand_dense(op.m(), op.n(), &mut rng);
        let mat = op.materialize(opts.size_cap)?;
        let kinv = kinv_als(
            &op,
            2,
            &KinvOptions {
                max_iter: 2,
                threads: opts.threads,
                ..Default::default()
            },
        )?;
        let precs: [&dyn Preconditioner; 2] = [&IdentityPreconditioner, &kinv];
        for p in precs {
            let pm = oracle::materialize_preconditioner(p, op.m(), op.n())?;
            let sopts = SolverOptions {
                tol: 1e-10,
                restart: 7,
                max_iter: 40,
                record_iterates: true,
                ..Default::default()
            };
            let (structured, reference) = if gmres_like {
                let rep = gmres(&op, p, &e, &sopts)?;
                let refs = oracle::gmres_vec(&mat, &pm, vectorize(&e), sopts.tol, sopts.restart, sopts.max_iter);
                (rep.iterates, refs)
            } else {
                let rep = bicgstab(&op, p, &e, &sopts)?;
                let refs = oracle::bicgstab_vec(&mat, &pm, vectorize(&e), sopts.tol, sopts.max_iter);
                (rep.iterates, refs)
            };
            let (w, same) = compare_iterates(&structured, &reference)?;
            worst = worst.max(w);
            counts_match &= same;
            steps += structured.len();
        }
    }
    Ok((
        worst <= 1e-8 && counts_match,
        format!("{steps} iterates, max relative difference {worst:.2e}, counts match: {counts_match}"),
    ))
}

fn check_vec_gmres(opts: &VerifyOptions) -> Outcome {
    vec_check(opts, true)
}

fn check_vec_bicgstab(opts: &VerifyOptions) -> Outcome {
    vec_check(opts, false)
}

fn check_parallel_determinism(opts: &VerifyOptions) -> Outcome {
    let inst = synthetic_banded(60, 50, 4, 2, opts.seed, false)?;
    let spec = PatternSpec::default();
    let pc = build_pattern(&inst.operator, Side::Right, &spec)?.pattern;
    let pd = build_pattern(&inst.operator, Side::Left, &spec)?.pattern;
    let workers = opts.threads.unwrap_or(4).max(2);
    let run = |threads| {
        kinv_sparse_als(
            &inst.operator,
            2,
            &pc,
            &pd,
            &KinvOptions {
                threads: Some(threads),
                max_iter: 4,
                ..Default::default()
            },
        )
    };
    let (a, b) = (run(1)?, run(workers)?);
    let mut worst: f64 = 0.0;
    for (x, y) in a.cs.iter().chain(&a.ds).zip(b.cs.iter().chain(&b.ds)) {
        worst = worst.max((x.to_dense() - y.to_dense()).amax());
    }
    Ok((worst <= 1e-14, format!("1 vs {workers} workers: max entry difference {worst:.2e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skips_above_cap() {
        let rep = run_selected(
            &VerifyOptions {
                size_cap: 30,
                ..Default::default()
            },
            &["svd_optimality", "kinv_exact_inverse"],
        );
        assert_eq!(rep.check("svd_optimality").unwrap().status, Status::Skip);
        assert_eq!(rep.check("kinv_exact_inverse").unwrap().status, Status::Pass);
        assert!(rep.passed());
    }

    fn flipped(c: &AlsCoefficients, nm: usize) -> f64 {
        let mut c = c.clone();
        for g in &mut c.gamma {
            for v in g.iter_mut() {
                *v = -*v;
            }
        }
        residual_squared(&c, nm)
    }

    #[test]
    fn sign_flip_in_residual_formula_is_caught() {
        let good = run_selected(&VerifyOptions::default(), &["kinv_residual_identity"]);
        assert!(good.passed(), "{:?}", good.checks);
        let bad = run_selected(
            &VerifyOptions {
                residual_formula: flipped,
                ..Default::default()
            },
            &["kinv_residual_identity"],
        );
        assert!(!bad.passed());
    }
}
