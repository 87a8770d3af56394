//! Subcommand implementations.

use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use kronsolve::kinv::{build_pattern, kinv_als, kinv_sparse_als, KinvOptions, KronInverse};
use kronsolve::krylov::{bicgstab, gmres, IdentityPreconditioner, Preconditioner, SolveReport, SolverOptions};
use kronsolve::matrix::{market, Factor};
use kronsolve::nkp::{nkp_als, nkp_svd, AlsOptions, KronApprox};
use kronsolve::operator::KroneckerOperator;
use kronsolve::problems::{circuit, convection_diffusion, synthetic_banded, CircuitData, ProblemInstance};
use kronsolve::sylvester::NkpPreconditioner;
use kronsolve::verify::{self, Status, VerifyOptions};
use kronsolve::Side;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Method, NkpRoute, PrecondConfig, PrecondType, ProblemConfig, RunConfig};

/// How a command ended; maps onto the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NotConverged,
    NumericalFailure,
}

impl Outcome {
    pub fn code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::NotConverged => 2,
            Outcome::NumericalFailure => 3,
        }
    }
}

pub fn build_problem(cfg: &RunConfig) -> Result<ProblemInstance> {
    let inst = match &cfg.problem {
        ProblemConfig::Circuit { n0, blocks: None } => circuit(*n0)?,
        ProblemConfig::Circuit { n0, blocks: Some(b) } => {
            let a1 = read_factor(&b.a1)?.to_sparse();
            let a2 = read_factor(&b.a2)?.to_sparse();
            let bv = read_factor(&b.b)?.to_dense();
            if a1.rows() != *n0 {
                anyhow::bail!(kronsolve::Error::Dimension(format!(
                    "A1 is {}x{} but n0 = {n0}",
                    a1.rows(),
                    a1.cols()
                )));
            }
            CircuitData::from_blocks(a1, a2, bv.as_slice().to_vec())?.into_instance()?
        }
        ProblemConfig::Convdiff { n, epsilon } => convection_diffusion(*n, *epsilon)?,
        ProblemConfig::Synthetic { n, m, r, band, spd, seed } => {
            synthetic_banded(*n, *m, *r, *band, seed.unwrap_or(cfg.seed), *spd)?
        }
        ProblemConfig::Files { manifest, rhs } => {
            let op = KroneckerOperator::load(manifest)
                .with_context(|| format!("loading operator manifest {}", manifest.display()))?;
            let e = read_factor(rhs)?.to_dense();
            ProblemInstance::new(
                "files",
                op,
                e,
                json!({ "manifest": manifest, "rhs": rhs }),
            )?
        }
    };
    Ok(inst)
}

fn read_factor(path: &Path) -> Result<Factor> {
    market::read(path).with_context(|| format!("reading {}", path.display()))
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<Outcome> {
    let inst = build_problem(cfg)?;
    let dir = output_dir(cfg)?;
    let prefix = &cfg.output.prefix;
    let manifest = inst.operator.save(&dir, prefix)?;
    let rhs = dir.join(format!("{prefix}E.mtx"));
    market::write(&rhs, &Factor::Dense(inst.rhs.clone()))?;
    let op = &inst.operator;
    println!(
        "{}: n = {}, m = {}, r = {} terms, N = {}",
        inst.name,
        op.n(),
        op.m(),
        op.r(),
        op.n() * op.m()
    );
    println!("manifest: {}", manifest.display());
    println!("rhs: {}", rhs.display());
    Ok(Outcome::Success)
}

/// A preconditioner ready for use plus what is worth reporting about it.
pub struct BuiltPreconditioner {
    pub precond: Box<dyn Preconditioner>,
    pub setup_seconds: f64,
    /// `||I - M P||_F` for KINV.
    pub residual: Option<f64>,
    pub report: Value,
    /// Factors to write out, by file stem.
    pub factors: Vec<(String, Factor)>,
}

fn kinv_options(p: &PrecondConfig, threads: Option<usize>) -> KinvOptions {
    let d = KinvOptions::default();
    KinvOptions {
        tol: p.als.tol,
        max_iter: p.als.max_iter.unwrap_or(d.max_iter),
        threads,
        ..d
    }
}

fn nkp_approx(op: &KroneckerOperator, p: &PrecondConfig) -> Result<KronApprox> {
    Ok(match p.route {
        NkpRoute::Svd => nkp_svd(op, p.q)?,
        NkpRoute::Als => {
            let d = AlsOptions::default();
            nkp_als(
                op,
                p.q,
                &AlsOptions {
                    tol: p.als.tol,
                    max_iter: p.als.max_iter.unwrap_or(d.max_iter),
                    init: None,
                },
            )?
        }
    })
}

fn compute_kinv(op: &KroneckerOperator, p: &PrecondConfig, threads: Option<usize>) -> Result<(KronInverse, Vec<String>)> {
    let opts = kinv_options(p, threads);
    let mut warnings = Vec::new();
    let inv = match &p.sparsity {
        None => kinv_als(op, p.q, &opts)?,
        Some(spec) => {
            let pc = build_pattern(op, Side::Right, spec)?;
            let pd = build_pattern(op, Side::Left, spec)?;
            warnings.extend(pc.warning.into_iter().chain(pd.warning));
            kinv_sparse_als(op, p.q, &pc.pattern, &pd.pattern, &opts)?
        }
    };
    if p.symmetrize {
        let mut sym = inv.symmetrize();
        sym.final_residual = sym.residual(op)?;
        return Ok((sym, warnings));
    }
    Ok((inv, warnings))
}

/// Builds the configured preconditioner. With `apply_ready` unset, NKP
/// approximations of rank above 2 are computed but not made applicable.
pub fn build_preconditioner(
    inst: &mut ProblemInstance,
    p: &PrecondConfig,
    threads: Option<usize>,
    apply_ready: bool,
) -> Result<BuiltPreconditioner> {
    let start = Instant::now();
    let op = &inst.operator;
    let mut factors = Vec::new();
    let (precond, residual, report): (Box<dyn Preconditioner>, _, _) = match p.kind {
        PrecondType::None => (Box::new(IdentityPreconditioner), None, json!({ "type": "none" })),
        PrecondType::Baseline => {
            let base = inst.baseline.take().ok_or_else(|| {
                kronsolve::Error::Argument(format!("problem '{}' has no baseline preconditioner", inst.name))
            })?;
            base.factorize()?;
            factors.push(("L".to_string(), Factor::Dense(base.left().clone())));
            factors.push(("G".to_string(), Factor::Dense(base.right().clone())));
            (Box::new(base), None, json!({ "type": "baseline" }))
        }
        PrecondType::Nkp => {
            let approx = nkp_approx(op, p)?;
            for (s, (y, z)) in approx.ys.iter().zip(&approx.zs).enumerate() {
                factors.push((format!("Y{}", s + 1), y.clone()));
                factors.push((format!("Z{}", s + 1), z.clone()));
            }
            let report = json!({
                "type": "nkp",
                "q": approx.q(),
                "route": p.route,
                "error": approx.error,
                "relative_error": approx.error / op.frobenius_norm(),
                "sigma": approx.sigma,
                "iterations": approx.iterations,
                "history": approx.history,
            });
            let precond: Box<dyn Preconditioner> = if apply_ready || approx.q() <= 2 {
                let nkp = NkpPreconditioner::new(&approx)?;
                nkp.factorize()?;
                Box::new(nkp)
            } else {
                Box::new(IdentityPreconditioner)
            };
            (precond, None, report)
        }
        PrecondType::Kinv => {
            let (inv, warnings) = compute_kinv(op, p, threads)?;
            for w in warnings.iter().chain(&inv.warnings) {
                eprintln!("warning: {w}");
            }
            for (s, (c, d)) in inv.cs.iter().zip(&inv.ds).enumerate() {
                factors.push((format!("C{}", s + 1), c.clone()));
                factors.push((format!("D{}", s + 1), d.clone()));
            }
            let report = json!({
                "type": "kinv",
                "q": inv.cs.len(),
                "residual": inv.final_residual,
                "relative_residual": inv.final_residual / ((op.n() * op.m()) as f64).sqrt(),
                "iterations": inv.iterations,
                "converged": inv.converged,
                "history": inv.history,
                "pattern_density": {
                    "C": inv.pattern_c.as_ref().map(|p| p.density()),
                    "D": inv.pattern_d.as_ref().map(|p| p.density()),
                },
                "warnings": warnings.iter().chain(&inv.warnings).collect::<Vec<_>>(),
            });
            let residual = Some(inv.final_residual);
            (Box::new(inv), residual, report)
        }
    };
    Ok(BuiltPreconditioner {
        precond,
        setup_seconds: start.elapsed().as_secs_f64(),
        residual,
        report,
        factors,
    })
}

pub fn cmd_precond(cfg: &RunConfig, threads: Option<usize>) -> Result<Outcome> {
    let mut inst = build_problem(cfg)?;
    let built = build_preconditioner(&mut inst, &cfg.preconditioner, threads, false)?;
    let dir = output_dir(cfg)?;
    let prefix = &cfg.output.prefix;
    for (stem, f) in &built.factors {
        market::write(dir.join(format!("{prefix}{stem}.mtx")), f)?;
    }
    let mut report = built.report;
    report["setup_seconds"] = json!(built.setup_seconds);
    report["bandwidth"] = json!(built.precond.bandwidth());
    let path = dir.join(format!("{prefix}precond.json"));
    write_json(&path, &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(Outcome::Success)
}

/// Fixed set of keys written to `summary.json`.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub converged: bool,
    pub iterations: usize,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    pub final_residual: f64,
    pub preconditioner_residual: Option<f64>,
}

pub fn run_solve(cfg: &RunConfig, threads: Option<usize>) -> Result<(SolveReport, Summary)> {
    let mut inst = build_problem(cfg)?;
    let built = build_preconditioner(&mut inst, &cfg.preconditioner, threads, true)?;
    let s = &cfg.solver;
    let opts = SolverOptions {
        tol: s.tol,
        restart: s.restart,
        max_iter: s.max_iter,
        record_bandwidth: s.record_bandwidth,
        record_iterates: false,
    };
    let mut report = match s.method {
        Method::Gmres => gmres(&inst.operator, built.precond.as_ref(), &inst.rhs, &opts)?,
        Method::Bicgstab => bicgstab(&inst.operator, built.precond.as_ref(), &inst.rhs, &opts)?,
    };
    report.setup_seconds = built.setup_seconds;
    let summary = Summary {
        converged: report.history.converged,
        iterations: report.history.iterations,
        setup_seconds: report.setup_seconds,
        solve_seconds: report.solve_seconds,
        final_residual: report.final_residual,
        preconditioner_residual: built.residual,
    };
    Ok((report, summary))
}

pub fn cmd_solve(cfg: &RunConfig, threads: Option<usize>) -> Result<Outcome> {
    let (report, summary) = run_solve(cfg, threads)?;
    let dir = output_dir(cfg)?;
    let prefix = &cfg.output.prefix;
    std::fs::write(dir.join(format!("{prefix}history.csv")), report.history.to_csv())?;
    write_json(&dir.join(format!("{prefix}summary.json")), &summary)?;
    println!(
        "{} after {} iterations, relative residual {:.3e} (setup {:.2} s, solve {:.2} s)",
        if summary.converged { "converged" } else { "not converged" },
        summary.iterations,
        summary.final_residual,
        summary.setup_seconds,
        summary.solve_seconds
    );
    if let Some(b) = &report.history.breakdown {
        eprintln!("breakdown: {b}");
    }
    Ok(if summary.converged {
        Outcome::Success
    } else if report.history.breakdown.is_some() {
        Outcome::NumericalFailure
    } else {
        Outcome::NotConverged
    })
}

pub fn cmd_verify(size_cap: usize, seed: u64, threads: Option<usize>, out: Option<&Path>) -> Result<Outcome> {
    let opts = VerifyOptions {
        size_cap,
        seed,
        threads,
        ..VerifyOptions::default()
    };
    let report = verify::run_suite(&opts);
    for c in &report.checks {
        let tag = match c.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        println!("{tag} {:<26} {:>8.3}s  {}", c.name, c.seconds, c.detail);
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("total {:.2}s", report.seconds);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("verify.json"), &report)?;
    }
    Ok(if report.passed() {
        Outcome::Success
    } else {
        Outcome::NumericalFailure
    })
}
