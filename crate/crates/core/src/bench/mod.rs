//! Benchmark catalog, sweeps, tables and reference comparison.

mod reference;
mod sweep;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_rt_parametric, assemble_th, make_geometry, BlockFormat, DirichletData, Discretization,
    GeometryKind, GeometryMap, StokesSpaces, StokesSystem, ViscosityField,
};
use crate::error::{Error, Result};
use crate::krylov::{gmres, minres, LinearOperator, SolveOptions, SolveReport};
use crate::precond::{
    build_pq, build_pv_geometry_aware, build_pv_plain, scale_pq, BlockKind, BlockPreconditioner,
    Ic0Options, Ic0Preconditioner, PressurePreconditioner, VelocityPreconditioner,
};

pub use reference::{compare_reference, load_reference, ReferenceComparison, ReferenceRow};
pub use sweep::{
    format_table, format_timing, load_sweep_config, run_sweep, timing_breakdown, write_results_csv,
    ResultRow, SweepConfig, SweepOutput, SweepSpec, TimingRow,
};

pub const DEFAULT_MAXIT: usize = 20000;
pub const DEFAULT_TOL: f64 = 1e-8;

/// Preconditioner identifiers: `pd`, `pt`, `pc` are block diagonal,
/// triangular and constrained; a trailing `g` selects the geometry-aware
/// blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecId {
    Pd,
    Pdg,
    Pt,
    Ptg,
    Pc,
    Pcg,
    Ic0,
}

impl PrecId {
    pub const ALL: [PrecId; 7] = [
        Self::Pd,
        Self::Pdg,
        Self::Pt,
        Self::Ptg,
        Self::Pc,
        Self::Pcg,
        Self::Ic0,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Self::Pd => "pd",
            Self::Pdg => "pdg",
            Self::Pt => "pt",
            Self::Ptg => "ptg",
            Self::Pc => "pc",
            Self::Pcg => "pcg",
            Self::Ic0 => "ic0",
        }
    }

    pub fn block_kind(self) -> Option<BlockKind> {
        match self {
            Self::Pd | Self::Pdg => Some(BlockKind::Diagonal),
            Self::Pt | Self::Ptg => Some(BlockKind::Triangular),
            Self::Pc | Self::Pcg => Some(BlockKind::Constrained),
            Self::Ic0 => None,
        }
    }

    pub fn geometry_aware(self) -> bool {
        matches!(self, Self::Pdg | Self::Ptg | Self::Pcg)
    }

    /// The Krylov method this preconditioner is paired with.
    pub fn solver(self) -> SolverId {
        match self {
            Self::Pd | Self::Pdg | Self::Ic0 => SolverId::Minres,
            _ => SolverId::Gmres,
        }
    }
}

impl fmt::Display for PrecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for PrecId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.tag() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown preconditioner '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverId {
    Minres,
    Gmres,
}

impl SolverId {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Minres => "minres",
            Self::Gmres => "gmres",
        }
    }
}

impl fmt::Display for SolverId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for SolverId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minres" => Ok(Self::Minres),
            "gmres" => Ok(Self::Gmres),
            _ => Err(Error::Parameter(format!("unknown solver '{s}'"))),
        }
    }
}

/// One benchmark run. `nu_k = None` (or `1`) means unit viscosity; otherwise
/// `ν = 1 + (k − 1)(1 + cos(atan(x/z)))/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub geometry: GeometryKind,
    pub disc: Discretization,
    pub degree: usize,
    pub n_el: usize,
    pub nu_k: Option<f64>,
    pub prec: PrecId,
    pub solver: SolverId,
    pub tol: f64,
    pub maxit: usize,
}

impl BenchCase {
    pub fn new(
        geometry: GeometryKind,
        disc: Discretization,
        degree: usize,
        n_el: usize,
        prec: PrecId,
    ) -> Self {
        Self {
            geometry,
            disc,
            degree,
            n_el,
            nu_k: None,
            prec,
            solver: prec.solver(),
            tol: DEFAULT_TOL,
            maxit: DEFAULT_MAXIT,
        }
    }

    pub fn with_nu_k(mut self, k: f64) -> Self {
        self.nu_k = Some(k);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.solver != self.prec.solver() {
            return Err(Error::Parameter(format!(
                "preconditioner {} is paired with {}, not {}",
                self.prec,
                self.prec.solver(),
                self.solver
            )));
        }
        if self.degree < 1 || self.n_el < 1 {
            return Err(Error::Parameter(format!(
                "degree {} and n_el {} must be positive",
                self.degree, self.n_el
            )));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Parameter(format!(
                "tolerance {} outside (0, 1)",
                self.tol
            )));
        }
        if self.maxit == 0 {
            return Err(Error::Parameter("maxit must be positive".into()));
        }
        if let Some(k) = self.nu_k {
            if !(k.is_finite() && k > 0.0) {
                return Err(Error::Viscosity(format!(
                    "parameter k = {k} must be positive"
                )));
            }
        }
        if self.disc == Discretization::RaviartThomas && self.geometry != GeometryKind::Cube {
            return Err(Error::Unsupported(
                "Raviart-Thomas runs only on the cube".into(),
            ));
        }
        Ok(())
    }

    pub fn viscosity(&self) -> ViscosityField<f64> {
        match self.nu_k {
            Some(k) if k != 1.0 => ViscosityField::AngularVariation { k },
            _ => ViscosityField::Constant(1.0),
        }
    }

    /// Driven-cavity data: lid `[1, 0, 0]` on the cube top; on the annulus
    /// `[−1, 0, 0]` on `y = 0` and the tangent `[√2/2, √2/2, 0]` on the
    /// opposite face.
    pub fn boundary_data(&self) -> DirichletData<f64> {
        match self.geometry {
            GeometryKind::Cube => DirichletData::cube_lid(),
            GeometryKind::Annulus => DirichletData::annulus_driven(),
        }
    }

    pub fn spaces(&self) -> Result<StokesSpaces<f64>> {
        StokesSpaces::new(self.disc, self.degree, self.n_el, None, None)
    }

    /// Number of unknowns without assembling anything.
    pub fn dofs(&self) -> Result<usize> {
        let sp = self.spaces()?;
        Ok(sp.n_u() + sp.n_q())
    }

    pub fn label(&self) -> String {
        let mut s = format!(
            "{} {} p={} n_el={} {}-{}",
            self.geometry.tag(),
            self.disc.tag(),
            self.degree,
            self.n_el,
            self.prec,
            self.solver
        );
        if let Some(k) = self.nu_k {
            s.push_str(&format!(" k={k}"));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchResult {
    pub case: BenchCase,
    pub dofs: usize,
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
    pub assembly_time: f64,
    /// Preconditioner construction.
    pub setup_time: f64,
    pub solve_time: f64,
    /// Time spent inside preconditioner applications during the solve.
    pub prec_time: f64,
    pub matvecs: usize,
    /// Inner CG iterations of the IC(0) baseline (velocity plus pressure).
    pub inner_iterations: usize,
    /// MINRES: preconditioned residual never increased. GMRES: true residual
    /// never increased.
    pub monotone: bool,
    pub residual_history: Vec<f64>,
}

impl BenchResult {
    /// Setup plus solve, the quantity reported next to iteration counts.
    pub fn total_time(&self) -> f64 {
        self.setup_time + self.solve_time
    }

    /// Fraction of the solve spent applying the preconditioner.
    pub fn prec_share(&self) -> f64 {
        if self.solve_time > 0.0 {
            (self.prec_time / self.solve_time).min(1.0)
        } else {
            0.0
        }
    }
}

/// Solution of a benchmark case: interior velocity unknowns followed by the
/// zero-mean pressure.
#[derive(Clone, Debug)]
pub struct CaseSolution {
    pub result: BenchResult,
    pub n_u: usize,
    pub x: Vec<f64>,
}

impl CaseSolution {
    pub fn velocity(&self) -> &[f64] {
        &self.x[..self.n_u]
    }

    pub fn pressure(&self) -> &[f64] {
        &self.x[self.n_u..]
    }
}

pub fn run_case(case: &BenchCase) -> Result<BenchResult> {
    solve_case(case).map(|s| s.result)
}

/// An assembled system that several preconditioners can be run on.
pub struct Problem {
    pub system: StokesSystem<f64>,
    pub geometry: GeometryMap<f64>,
    pub viscosity: ViscosityField<f64>,
    pub assembly_time: f64,
    key: ProblemKey,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ProblemKey {
    geometry: GeometryKind,
    disc: Discretization,
    degree: usize,
    n_el: usize,
    nu_k: Option<f64>,
}

impl ProblemKey {
    fn of(case: &BenchCase) -> Self {
        Self {
            geometry: case.geometry,
            disc: case.disc,
            degree: case.degree,
            n_el: case.n_el,
            nu_k: case.nu_k.filter(|&k| k != 1.0),
        }
    }
}

impl Problem {
    /// Assembles the driven-cavity system described by `case`; the
    /// preconditioner and solver fields are ignored.
    pub fn assemble(case: &BenchCase) -> Result<Self> {
        case.validate().map_err(|e| with_context(case, e))?;
        let t = Instant::now();
        let spaces = case.spaces()?;
        let geometry: GeometryMap<f64> = make_geometry(case.geometry, 4)?;
        let viscosity = case.viscosity();
        let data = case.boundary_data();
        let system = match case.disc {
            Discretization::TaylorHood => {
                assemble_th(&spaces, &geometry, &viscosity, &data, BlockFormat::Auto)
            }
            Discretization::RaviartThomas => {
                assemble_rt_parametric(&spaces, &geometry, &viscosity, &data, None)
            }
        }
        .map_err(|e| with_context(case, e))?;
        Ok(Self {
            system,
            geometry,
            viscosity,
            assembly_time: t.elapsed().as_secs_f64(),
            key: ProblemKey::of(case),
        })
    }

    /// Whether `case` describes the same linear system.
    pub fn matches(&self, case: &BenchCase) -> bool {
        self.key == ProblemKey::of(case)
    }

    /// Builds the preconditioner of `case`, solves, and shifts the pressure
    /// to zero mean.
    pub fn solve(&self, case: &BenchCase) -> Result<CaseSolution> {
        case.validate().map_err(|e| with_context(case, e))?;
        if !self.matches(case) {
            return Err(Error::Parameter(format!(
                "{} does not describe the assembled problem",
                case.label()
            )));
        }
        let system = &self.system;
        let opts = SolveOptions {
            tol: case.tol,
            maxit: case.maxit,
        };
        let rhs = system.rhs();
        let (mut x, report, setup_time, inner_iterations) = match case.prec.block_kind() {
            Some(kind) => {
                let t = Instant::now();
                let (pv, pq) = block_parts(case.prec, system, &self.geometry, &self.viscosity)?;
                let bp = BlockPreconditioner::new(kind, &pv, &pq, system)?;
                let setup = t.elapsed().as_secs_f64();
                let (x, rep) = krylov_solve(case.solver, system, &rhs, &bp, &opts)?;
                (x, rep, setup, 0)
            }
            None => {
                let t = Instant::now();
                let ic = Ic0Preconditioner::from_system(system, Ic0Options::default())?;
                let setup = t.elapsed().as_secs_f64();
                let (x, rep) = krylov_solve(case.solver, system, &rhs, &ic, &opts)?;
                let (iv, ip) = ic.inner_iterations();
                (x, rep, setup, iv + ip)
            }
        };

        let n_u = system.n_u();
        system.zero_mean_pressure(&mut x[n_u..]);
        let monotone = match case.solver {
            SolverId::Minres => non_increasing(&report.preconditioned_history),
            SolverId::Gmres => non_increasing(&report.residual_history),
        };
        let result = BenchResult {
            case: *case,
            dofs: system.dim(),
            iterations: report.iterations,
            converged: report.converged,
            relative_residual: report.relative_residual,
            assembly_time: self.assembly_time,
            setup_time,
            solve_time: report.solve_time,
            prec_time: report.prec_time,
            matvecs: report.matvecs,
            inner_iterations,
            monotone,
            residual_history: report.residual_history,
        };
        Ok(CaseSolution { result, n_u, x })
    }
}

fn with_context(case: &BenchCase, e: Error) -> Error {
    match e {
        Error::Unsupported(m) => Error::Unsupported(format!("{}: {m}", case.label())),
        Error::Parameter(m) => Error::Parameter(format!("{}: {m}", case.label())),
        other => other,
    }
}

/// Assembles, builds the preconditioner, solves, and shifts the pressure to
/// zero mean.
pub fn solve_case(case: &BenchCase) -> Result<CaseSolution> {
    Problem::assemble(case)?.solve(case)
}

fn block_parts(
    prec: PrecId,
    system: &StokesSystem<f64>,
    geometry: &GeometryMap<f64>,
    viscosity: &ViscosityField<f64>,
) -> Result<(VelocityPreconditioner<f64>, PressurePreconditioner<f64>)> {
    let spaces = &system.spaces;
    if prec.geometry_aware() {
        let pv = build_pv_geometry_aware(system, geometry, viscosity)?;
        let pq = scale_pq(build_pq(spaces)?, &system.q.diagonal())?;
        Ok((pv, pq))
    } else {
        Ok((build_pv_plain(spaces, system.c_pen)?, build_pq(spaces)?))
    }
}

fn krylov_solve(
    solver: SolverId,
    system: &StokesSystem<f64>,
    rhs: &[f64],
    prec: &dyn LinearOperator<f64>,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    match solver {
        SolverId::Minres => minres(system, rhs, Some(prec), opts),
        SolverId::Gmres => gmres(system, rhs, Some(prec), opts),
    }
}

fn non_increasing(h: &[f64]) -> bool {
    h.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-10))
}
