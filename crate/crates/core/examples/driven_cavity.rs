use stokes_fd::assembly::{Discretization, GeometryKind};
use stokes_fd::bench::{BenchCase, PrecId, Problem};

fn main() -> stokes_fd::Result<()> {
    let base = BenchCase::new(
        GeometryKind::Annulus,
        Discretization::TaylorHood,
        2,
        4,
        PrecId::Pd,
    );
    let problem = Problem::assemble(&base)?;
    println!(
        "{} unknowns, assembled in {:.2}s",
        problem.system.dim(),
        problem.assembly_time
    );
    for prec in [PrecId::Pd, PrecId::Pdg, PrecId::Ptg, PrecId::Pcg] {
        let case = BenchCase {
            prec,
            solver: prec.solver(),
            ..base
        };
        let r = problem.solve(&case)?.result;
        println!(
            "{:<4} {:<6} {:>4} iterations, residual {:.1e}, setup {:.3}s, solve {:.3}s",
            prec.tag(),
            case.solver.tag(),
            r.iterations,
            r.relative_residual,
            r.setup_time,
            r.solve_time
        );
    }
    Ok(())
}
