use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use stokes_fd::assembly::{make_geometry, Discretization, GeometryKind};
use stokes_fd::bench::{
    compare_reference, format_table, format_timing, load_reference, load_sweep_config, run_sweep,
    solve_case, timing_breakdown, write_results_csv, BenchCase, PrecId, ResultRow, SolverId,
    DEFAULT_MAXIT,
};
use stokes_fd::spectral::{verify_bounds, EigMode};

/// Block preconditioners for B-spline Stokes discretizations: benchmark driver.
#[derive(Parser)]
#[command(name = "stokes-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble and solve one case.
    Solve(SolveArgs),
    /// Run every sweep of a TOML config and write one CSV and text table per sweep.
    Sweep(SweepArgs),
    /// Check the extreme eigenvalues of the preconditioned blocks against the analytic bounds.
    VerifyBounds(BoundsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Geometry {
    Cube,
    Annulus,
}

impl From<Geometry> for GeometryKind {
    fn from(g: Geometry) -> Self {
        match g {
            Geometry::Cube => GeometryKind::Cube,
            Geometry::Annulus => GeometryKind::Annulus,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Disc {
    Th,
    Rt,
}

impl From<Disc> for Discretization {
    fn from(d: Disc) -> Self {
        match d {
            Disc::Th => Discretization::TaylorHood,
            Disc::Rt => Discretization::RaviartThomas,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Dense,
    Lanczos,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, value_enum)]
    geometry: Geometry,
    #[arg(long, value_enum, default_value = "th")]
    disc: Disc,
    #[arg(long)]
    degree: usize,
    #[arg(long)]
    nel: usize,
    /// pd, pdg, pt, ptg, pc, pcg or ic0.
    #[arg(long)]
    prec: PrecId,
    /// Defaults to the pairing of the preconditioner.
    #[arg(long)]
    solver: Option<SolverId>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAXIT)]
    maxit: usize,
    /// Viscosity parameter k of ν = 1 + (k − 1)(1 + cos(atan(x/z)))/2.
    #[arg(long)]
    nu_k: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the relative residual history, one value per line.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reference CSV of published iteration counts to compare against.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Relative deviation above which a reference comparison is flagged.
    #[arg(long, default_value_t = 0.2)]
    ref_tol: f64,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, value_enum)]
    geometry: Geometry,
    #[arg(long)]
    degree: usize,
    #[arg(long)]
    nel: usize,
    #[arg(long)]
    nu_k: Option<f64>,
    #[arg(long, value_enum, default_value = "dense")]
    mode: Mode,
    /// Lanczos steps.
    #[arg(long, default_value_t = 200)]
    steps: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::VerifyBounds(a) => bounds(a),
    };
    match run {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn solve(a: SolveArgs) -> Result<bool> {
    let mut case = BenchCase::new(a.geometry.into(), a.disc.into(), a.degree, a.nel, a.prec);
    if let Some(s) = a.solver {
        case.solver = s;
    }
    case.tol = a.tol;
    case.maxit = a.maxit;
    case.nu_k = a.nu_k;
    let sol = solve_case(&case)?;
    let r = &sol.result;
    println!(
        "{}: dofs {} iterations {} converged {} residual {:.2e} assembly {:.3}s setup {:.3}s solve {:.3}s prec share {:.1}%",
        case.label(),
        r.dofs,
        r.iterations,
        r.converged,
        r.relative_residual,
        r.assembly_time,
        r.setup_time,
        r.solve_time,
        100.0 * r.prec_share()
    );
    if let Some(path) = &a.out {
        write_results_csv(path, &[ResultRow::from_outcome(&case, &Ok(r.clone()))])
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &a.history {
        let text: String = r
            .residual_history
            .iter()
            .map(|v| format!("{v:.6e}\n"))
            .collect();
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(r.converged)
}

fn sweep(a: SweepArgs) -> Result<bool> {
    let config =
        load_sweep_config(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let outputs = run_sweep(&config, Some(&a.out))?;
    let mut ok = true;
    let mut results = Vec::new();
    for o in &outputs {
        println!(
            "{}",
            format_table(&o.spec.title(), &o.spec.degrees, &o.spec.n_el, &o.rows)
        );
        for row in o.rows.iter().filter(|r| !r.converged) {
            let why = row.error.as_deref().unwrap_or("not converged");
            eprintln!("failed: p={} n_el={}: {why}", row.degree, row.n_el);
        }
        ok &= o.all_converged();
        results.extend(o.results.iter().cloned());
    }
    let timing = format_timing(&timing_breakdown(&results));
    fs::write(a.out.join("timing.txt"), &timing)?;
    if let Some(path) = &a.reference {
        let reference =
            load_reference(path).with_context(|| format!("reading {}", path.display()))?;
        let cmp = compare_reference(&results, &reference, a.ref_tol);
        let mut w = csv::Writer::from_path(a.out.join("reference_comparison.csv"))?;
        for c in &cmp {
            w.serialize(c)?;
            let mark = if c.flagged { "DEVIATES" } else { "ok" };
            println!(
                "{:<40} ours {:>5} reference {:>5} ({:+.1}%) {mark}",
                c.label,
                c.ours,
                c.reference,
                100.0 * c.deviation
            );
        }
        w.flush()?;
    }
    Ok(ok)
}

fn bounds(a: BoundsArgs) -> Result<bool> {
    let kind: GeometryKind = a.geometry.into();
    let geometry = make_geometry::<f64>(kind, 4)?;
    let case = BenchCase {
        nu_k: a.nu_k,
        ..BenchCase::new(
            kind,
            Discretization::TaylorHood,
            a.degree,
            a.nel,
            PrecId::Pd,
        )
    };
    case.validate()?;
    let mode = match a.mode {
        Mode::Dense => EigMode::Dense,
        Mode::Lanczos => EigMode::Lanczos { steps: a.steps },
    };
    if a.steps == 0 {
        bail!("--steps must be positive");
    }
    let rep = verify_bounds(&geometry, &case.viscosity(), a.degree, a.nel, mode)?;
    let b = &rep.bounds;
    let verdict = |ok: bool| if ok { "inside" } else { "OUTSIDE" };
    println!(
        "velocity (n = {}): eigenvalues [{:.6}, {:.6}], bounds [{:.6}, {:.6}] {}",
        rep.n_u,
        rep.velocity.0,
        rep.velocity.1,
        b.delta,
        b.delta_upper,
        verdict(rep.velocity_ok())
    );
    println!(
        "pressure (n = {}): eigenvalues [{:.6}, {:.6}], bounds [{:.6}, {:.6}] {}",
        rep.n_q,
        rep.pressure.0,
        rep.pressure.1,
        b.theta,
        b.theta_upper,
        verdict(rep.pressure_ok())
    );
    Ok(rep.velocity_ok() && rep.pressure_ok())
}
