use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BenchResult, PrecId, SolverId};
use crate::assembly::{Discretization, GeometryKind};
use crate::error::Result;

/// One published cell: iteration count and time in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub table: u32,
    pub geometry: GeometryKind,
    pub disc: Discretization,
    pub prec: PrecId,
    pub solver: SolverId,
    pub degree: usize,
    pub n_el: usize,
    pub iterations: usize,
    pub time_s: f64,
}

pub fn load_reference(path: &Path) -> Result<Vec<ReferenceRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReferenceComparison {
    pub label: String,
    pub table: u32,
    pub ours: usize,
    pub reference: usize,
    /// `(ours − reference) / reference`.
    pub deviation: f64,
    pub converged: bool,
    /// Set when the run did not converge or deviates by more than the tolerance.
    pub flagged: bool,
}

/// Matches unit-viscosity results against reference cells with the same
/// geometry, discretization, preconditioner, solver, degree and mesh.
pub fn compare_reference(
    results: &[BenchResult],
    reference: &[ReferenceRow],
    rel_tol: f64,
) -> Vec<ReferenceComparison> {
    let mut out = Vec::new();
    for r in results {
        let c = &r.case;
        if c.nu_k.is_some_and(|k| k != 1.0) {
            continue;
        }
        let hit = reference.iter().find(|f| {
            f.geometry == c.geometry
                && f.disc == c.disc
                && f.prec == c.prec
                && f.solver == c.solver
                && f.degree == c.degree
                && f.n_el == c.n_el
        });
        if let Some(f) = hit {
            let deviation = (r.iterations as f64 - f.iterations as f64) / f.iterations as f64;
            out.push(ReferenceComparison {
                label: c.label(),
                table: f.table,
                ours: r.iterations,
                reference: f.iterations,
                deviation,
                converged: r.converged,
                flagged: !r.converged || deviation.abs() > rel_tol,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::BenchCase;

    fn result(iterations: usize, n_el: usize) -> BenchResult {
        BenchResult {
            case: BenchCase::new(
                GeometryKind::Cube,
                Discretization::TaylorHood,
                2,
                n_el,
                PrecId::Pd,
            ),
            dofs: 0,
            iterations,
            converged: true,
            relative_residual: 1e-9,
            assembly_time: 0.0,
            setup_time: 0.0,
            solve_time: 0.0,
            prec_time: 0.0,
            matvecs: 0,
            inner_iterations: 0,
            monotone: true,
            residual_history: Vec::new(),
        }
    }

    fn bundled() -> Vec<ReferenceRow> {
        let p =
            Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/reference/reference_tables.csv");
        load_reference(&p).unwrap()
    }

    #[test]
    fn bundled_reference_loads() {
        let rows = bundled();
        assert!(rows.len() > 100);
        let hit = rows
            .iter()
            .find(|r| r.table == 1 && r.prec == PrecId::Pd && r.degree == 2 && r.n_el == 8)
            .unwrap();
        assert_eq!(hit.iterations, 53);
        assert!(rows.iter().all(|r| r.prec.solver() == r.solver));
    }

    #[test]
    fn flags_deviations() {
        let rows = bundled();
        let cmp = compare_reference(&[result(53, 8), result(80, 4), result(10, 3)], &rows, 0.2);
        assert_eq!(cmp.len(), 2);
        assert!(!cmp[0].flagged && cmp[0].deviation == 0.0);
        assert!(cmp[1].flagged && cmp[1].reference == 48);
    }
}
