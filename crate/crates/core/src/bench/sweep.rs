use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{run_case, BenchCase, BenchResult, PrecId, SolverId, DEFAULT_MAXIT, DEFAULT_TOL};
use crate::assembly::{Discretization, GeometryKind};
use crate::error::{Error, Result};

/// Table cell for a case that failed or did not converge.
pub const FAILED_CELL: &str = "∗";

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Cases with more unknowns are skipped and reported as failed cells.
    #[serde(default)]
    pub max_dofs: Option<usize>,
    #[serde(default)]
    pub sweep: Vec<SweepSpec>,
}

/// One table: a fixed geometry, discretization and preconditioner over a
/// grid of degrees and mesh sizes.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub geometry: GeometryKind,
    pub disc: Discretization,
    pub prec: PrecId,
    #[serde(default)]
    pub solver: Option<SolverId>,
    #[serde(default)]
    pub degrees: Vec<usize>,
    #[serde(default)]
    pub n_el: Vec<usize>,
    #[serde(default)]
    pub nu_k: Option<f64>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub maxit: Option<usize>,
    #[serde(default)]
    pub max_dofs: Option<usize>,
}

impl SweepSpec {
    pub fn cases(&self) -> Vec<BenchCase> {
        let mut out = Vec::with_capacity(self.degrees.len() * self.n_el.len());
        for &n in &self.n_el {
            for &p in &self.degrees {
                out.push(BenchCase {
                    geometry: self.geometry,
                    disc: self.disc,
                    degree: p,
                    n_el: n,
                    nu_k: self.nu_k,
                    prec: self.prec,
                    solver: self.solver.unwrap_or(self.prec.solver()),
                    tol: self.tol.unwrap_or(DEFAULT_TOL),
                    maxit: self.maxit.unwrap_or(DEFAULT_MAXIT),
                });
            }
        }
        out
    }

    /// File stem `geometry_disc_prec`, with `_k<K>` for variable viscosity.
    pub fn stem(&self) -> String {
        let mut s = format!("{}_{}_{}", self.geometry.tag(), self.disc.tag(), self.prec);
        if let Some(k) = self.nu_k {
            s.push_str(&format!("_k{k}"));
        }
        s
    }

    pub fn title(&self) -> String {
        let mut s = format!(
            "{} {} {}-{}",
            self.geometry.tag(),
            self.disc.tag(),
            self.prec,
            self.solver.unwrap_or(self.prec.solver())
        );
        if let Some(k) = self.nu_k {
            s.push_str(&format!(" k={k}"));
        }
        s
    }
}

pub fn load_sweep_config(path: &Path) -> Result<SweepConfig> {
    let text = fs::read_to_string(path)?;
    parse_sweep_config(&text)
}

pub fn parse_sweep_config(text: &str) -> Result<SweepConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

/// Flat CSV record of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub geometry: GeometryKind,
    pub disc: Discretization,
    pub degree: usize,
    pub n_el: usize,
    pub nu_k: Option<f64>,
    pub prec: PrecId,
    pub solver: SolverId,
    pub tol: f64,
    pub maxit: usize,
    pub dofs: Option<usize>,
    pub iterations: Option<usize>,
    pub converged: bool,
    pub relative_residual: Option<f64>,
    pub assembly_s: Option<f64>,
    pub setup_s: Option<f64>,
    pub solve_s: Option<f64>,
    pub prec_s: Option<f64>,
    pub prec_share: Option<f64>,
    pub matvecs: Option<usize>,
    pub inner_iterations: Option<usize>,
    pub monotone: Option<bool>,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn from_outcome(
        case: &BenchCase,
        outcome: &std::result::Result<BenchResult, String>,
    ) -> Self {
        let mut row = Self {
            geometry: case.geometry,
            disc: case.disc,
            degree: case.degree,
            n_el: case.n_el,
            nu_k: case.nu_k,
            prec: case.prec,
            solver: case.solver,
            tol: case.tol,
            maxit: case.maxit,
            dofs: None,
            iterations: None,
            converged: false,
            relative_residual: None,
            assembly_s: None,
            setup_s: None,
            solve_s: None,
            prec_s: None,
            prec_share: None,
            matvecs: None,
            inner_iterations: None,
            monotone: None,
            error: None,
        };
        match outcome {
            Ok(r) => {
                row.dofs = Some(r.dofs);
                row.iterations = Some(r.iterations);
                row.converged = r.converged;
                row.relative_residual = Some(r.relative_residual);
                row.assembly_s = Some(r.assembly_time);
                row.setup_s = Some(r.setup_time);
                row.solve_s = Some(r.solve_time);
                row.prec_s = Some(r.prec_time);
                row.prec_share = Some(r.prec_share());
                row.matvecs = Some(r.matvecs);
                row.inner_iterations = Some(r.inner_iterations);
                row.monotone = Some(r.monotone);
            }
            Err(e) => row.error = Some(e.clone()),
        }
        row
    }

    /// Table cell: `iterations / seconds`, or the failure marker.
    pub fn cell(&self) -> String {
        match (self.converged, self.iterations, self.setup_s, self.solve_s) {
            (true, Some(it), Some(s), Some(t)) => format!("{it} / {:.2}", s + t),
            _ => FAILED_CELL.to_string(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub spec: SweepSpec,
    pub rows: Vec<ResultRow>,
    pub results: Vec<BenchResult>,
    pub csv_path: Option<PathBuf>,
    pub table_path: Option<PathBuf>,
}

impl SweepOutput {
    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }
}

/// Runs every sweep. With `out_dir`, writes `<stem>.csv` and `<stem>.txt`
/// per sweep. Failures are recorded per cell and never abort the sweep.
pub fn run_sweep(config: &SweepConfig, out_dir: Option<&Path>) -> Result<Vec<SweepOutput>> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut used = HashSet::new();
    let mut outputs = Vec::with_capacity(config.sweep.len());
    for spec in &config.sweep {
        let limit = spec.max_dofs.or(config.max_dofs);
        let mut rows = Vec::new();
        let mut results = Vec::new();
        for case in spec.cases() {
            let outcome = run_guarded(&case, limit);
            rows.push(ResultRow::from_outcome(&case, &outcome));
            if let Ok(r) = outcome {
                results.push(r);
            }
        }
        let (mut csv_path, mut table_path) = (None, None);
        if let Some(dir) = out_dir {
            let mut stem = spec.stem();
            let mut i = 2;
            while !used.insert(stem.clone()) {
                stem = format!("{}_{i}", spec.stem());
                i += 1;
            }
            let c = dir.join(format!("{stem}.csv"));
            let t = dir.join(format!("{stem}.txt"));
            write_results_csv(&c, &rows)?;
            fs::write(
                &t,
                format_table(&spec.title(), &spec.degrees, &spec.n_el, &rows),
            )?;
            csv_path = Some(c);
            table_path = Some(t);
        }
        outputs.push(SweepOutput {
            spec: spec.clone(),
            rows,
            results,
            csv_path,
            table_path,
        });
    }
    Ok(outputs)
}

fn run_guarded(
    case: &BenchCase,
    max_dofs: Option<usize>,
) -> std::result::Result<BenchResult, String> {
    if let Some(limit) = max_dofs {
        let dofs = case.dofs().map_err(|e| e.to_string())?;
        if dofs > limit {
            return Err(Error::SizeGuard { dim: dofs, limit }.to_string());
        }
    }
    run_case(case).map_err(|e| e.to_string())
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(RESULT_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

const RESULT_HEADER: [&str; 22] = [
    "geometry",
    "disc",
    "degree",
    "n_el",
    "nu_k",
    "prec",
    "solver",
    "tol",
    "maxit",
    "dofs",
    "iterations",
    "converged",
    "relative_residual",
    "assembly_s",
    "setup_s",
    "solve_s",
    "prec_s",
    "prec_share",
    "matvecs",
    "inner_iterations",
    "monotone",
    "error",
];

/// Aligned text table: one row per `n_el`, one column per degree.
pub fn format_table(title: &str, degrees: &[usize], n_el: &[usize], rows: &[ResultRow]) -> String {
    let mut grid: Vec<Vec<String>> = Vec::with_capacity(n_el.len() + 1);
    let mut header = vec!["n_el".to_string()];
    header.extend(degrees.iter().map(|p| format!("p = {p}")));
    grid.push(header);
    for &n in n_el {
        let mut line = vec![n.to_string()];
        for &p in degrees {
            let cell = rows
                .iter()
                .find(|r| r.n_el == n && r.degree == p)
                .map_or_else(|| FAILED_CELL.to_string(), ResultRow::cell);
            line.push(cell);
        }
        grid.push(line);
    }
    let ncol = grid[0].len();
    let widths: Vec<usize> = (0..ncol)
        .map(|c| grid.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    for (i, line) in grid.iter().enumerate() {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(s, &w)| format!("{}{s}", " ".repeat(w - s.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", cells.join(" | "));
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            let _ = writeln!(out, "{}", rule.join("-+-"));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub label: String,
    pub setup_s: f64,
    pub apply_s: f64,
    /// Solve time outside the preconditioner: matvecs and orthogonalization.
    pub other_s: f64,
    pub setup_share: f64,
    pub apply_share: f64,
    pub other_share: f64,
}

/// Splits each case's setup-plus-solve time into preconditioner setup,
/// preconditioner application and the remainder.
pub fn timing_breakdown(results: &[BenchResult]) -> Vec<TimingRow> {
    results
        .iter()
        .map(|r| {
            let apply = r.prec_time.min(r.solve_time).max(0.0);
            let setup = r.setup_time.max(0.0);
            let other = (r.solve_time - apply).max(0.0);
            let total = setup + apply + other;
            let share = |x: f64| if total > 0.0 { x / total } else { 0.0 };
            TimingRow {
                label: r.case.label(),
                setup_s: setup,
                apply_s: apply,
                other_s: other,
                setup_share: share(setup),
                apply_share: share(apply),
                other_share: share(other),
            }
        })
        .collect()
}

pub fn format_timing(rows: &[TimingRow]) -> String {
    let w = rows
        .iter()
        .map(|r| r.label.chars().count())
        .max()
        .unwrap_or(4)
        .max(4);
    let mut out = format!(
        "{:<w$} | {:>9} | {:>9} | {:>9} | {:>7} | {:>7} | {:>7}\n",
        "case", "setup s", "apply s", "other s", "setup%", "apply%", "other%"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<w$} | {:>9.3} | {:>9.3} | {:>9.3} | {:>7.2} | {:>7.2} | {:>7.2}",
            r.label,
            r.setup_s,
            r.apply_s,
            r.other_s,
            100.0 * r.setup_share,
            100.0 * r.apply_share,
            100.0 * r.other_share
        );
    }
    out
}
