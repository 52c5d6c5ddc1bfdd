use stokes_fd::assembly::{make_geometry, GeometryKind, ViscosityField};
use stokes_fd::spectral::{verify_bounds, EigMode};

fn run(
    kind: GeometryKind,
    p: usize,
    n_el: usize,
    mode: EigMode,
) -> stokes_fd::spectral::BoundsReport {
    let geo = make_geometry::<f64>(kind, 0).unwrap();
    verify_bounds(&geo, &ViscosityField::constant(1.0).unwrap(), p, n_el, mode).unwrap()
}

#[test]
fn preconditioned_spectra_lie_within_admissible_bounds() {
    for kind in [GeometryKind::Cube, GeometryKind::Annulus] {
        for (p, n_el) in [(2, 2), (3, 2), (2, 3)] {
            let r = run(kind, p, n_el, EigMode::Dense);
            println!(
                "{kind:?} p={p} n_el={n_el}: {:?} {:?} {:?}",
                r.velocity, r.pressure, r.bounds
            );
            assert!(
                r.velocity_ok(),
                "{kind:?} p={p} n_el={n_el}: {:?} vs {:?}",
                r.velocity,
                r.bounds
            );
            assert!(
                r.pressure_ok(),
                "{kind:?} p={p} n_el={n_el}: {:?} vs {:?}",
                r.pressure,
                r.bounds
            );
        }
    }
}

#[test]
fn velocity_conditioning_is_bounded_and_saturates_under_refinement() {
    for kind in [GeometryKind::Cube, GeometryKind::Annulus] {
        let lz = EigMode::Lanczos { steps: 200 };
        let reports: Vec<_> = [2, 4, 8].iter().map(|&n| run(kind, 2, n, lz)).collect();
        let ratios: Vec<f64> = reports.iter().map(|r| r.velocity_ratio()).collect();
        let p3 = run(kind, 3, 2, EigMode::Dense).velocity_ratio();
        println!("{kind:?}: h-ratios {ratios:?}, p=3 ratio {p3}");
        for r in &reports {
            assert!(r.velocity_ok());
            assert!(r.velocity_ratio() <= r.bounds.delta_upper / r.bounds.delta);
        }
        assert!(
            (ratios[2] - ratios[1]).abs() < (ratios[1] - ratios[0]).abs(),
            "{ratios:?}"
        );
        assert!(p3 <= reports[0].bounds.delta_upper / reports[0].bounds.delta);
    }
}

#[test]
fn lanczos_estimates_match_dense_extremes() {
    let dense = run(GeometryKind::Annulus, 2, 2, EigMode::Dense);
    let lz = run(GeometryKind::Annulus, 2, 2, EigMode::Lanczos { steps: 200 });
    for (a, b) in [(dense.velocity, lz.velocity), (dense.pressure, lz.pressure)] {
        assert!((a.0 - b.0).abs() <= 1e-4 * a.0);
        assert!((a.1 - b.1).abs() <= 1e-4 * a.1);
    }
}
