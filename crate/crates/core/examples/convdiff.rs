//! Solves the convection–diffusion benchmark with each preconditioner and
//! prints the GMRES(50) iteration counts.
//!
//! `cargo run --release --example convdiff -- [n] [1/epsilon]`

use kronsolve::kinv::{build_pattern, kinv_sparse_als, KinvOptions, PatternSpec};
use kronsolve::krylov::{gmres, IdentityPreconditioner, Preconditioner, SolverOptions};
use kronsolve::nkp::nkp_svd;
use kronsolve::problems::convection_diffusion;
use kronsolve::sylvester::NkpPreconditioner;
use kronsolve::Side;

fn main() -> kronsolve::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(200, |s| s.parse().expect("n"));
    let inv_eps: f64 = args.next().map_or(10.0, |s| s.parse().expect("1/epsilon"));
    let inst = convection_diffusion(n, 1.0 / inv_eps)?;
    let op = &inst.operator;
    let opts = SolverOptions {
        tol: 1e-6,
        restart: 50,
        max_iter: 200,
        ..SolverOptions::default()
    };

    let nkp = NkpPreconditioner::new(&nkp_svd(op, 2)?)?;
    let spec = PatternSpec { power: 8, density_cap: 1.0, ..PatternSpec::default() };
    let pc = build_pattern(op, Side::Right, &spec)?.pattern;
    let pd = build_pattern(op, Side::Left, &spec)?.pattern;
    let kinv = kinv_sparse_als(op, 4, &pc, &pd, &KinvOptions { tol: Some(1e-6), ..KinvOptions::default() })?;
    let baseline = inst.baseline.as_ref().expect("convdiff has a baseline");

    let runs: [(&str, &dyn Preconditioner); 4] = [
        ("none", &IdentityPreconditioner),
        ("mean-based", baseline),
        ("NKP(2)", &nkp),
        ("KINV(4)", &kinv),
    ];
    println!("n = {n}, epsilon = 1/{inv_eps}");
    for (name, pre) in runs {
        let rep = gmres(op, pre, &inst.rhs, &opts)?;
        println!(
            "{name:>10}: {:>4} iterations{}  residual {:.2e}  {:.2}s",
            rep.history.iterations,
            if rep.history.converged { " " } else { "*" },
            rep.final_residual,
            rep.solve_seconds
        );
    }
    Ok(())
}
