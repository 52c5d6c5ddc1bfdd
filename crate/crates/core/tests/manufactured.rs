use stokes_fd::assembly::{
    assemble_th, BlockFormat, ComponentSpace, DirichletData, Discretization, GeometryMap,
    StokesSpaces, ViscosityField,
};
use stokes_fd::krylov::{minres, SolveOptions};
use stokes_fd::precond::{build_pq, build_pv_plain, BlockKind, BlockPreconditioner};

// u = curl-type field of φ = x²(1−x)² y²(1−y)² z(1−z): divergence free,
// zero on the boundary, with p = 0 and f = −Δu for ν = 1.
fn s(t: f64) -> [f64; 4] {
    [
        t * t - 2.0 * t.powi(3) + t.powi(4),
        2.0 * t - 6.0 * t * t + 4.0 * t.powi(3),
        2.0 - 12.0 * t + 12.0 * t * t,
        -12.0 + 24.0 * t,
    ]
}

fn exact(x: [f64; 3]) -> ([[f64; 3]; 3], [f64; 3]) {
    let (sx, sy) = (s(x[0]), s(x[1]));
    let z = x[2] * (1.0 - x[2]);
    let dz = 1.0 - 2.0 * x[2];
    let grad = [
        [sx[1] * sy[1] * z, sx[0] * sy[2] * z, sx[0] * sy[1] * dz],
        [-sx[2] * sy[0] * z, -sx[1] * sy[1] * z, -sx[1] * sy[0] * dz],
        [0.0; 3],
    ];
    let lap1 = sx[2] * sy[1] * z + sx[0] * sy[3] * z - 2.0 * sx[0] * sy[1];
    let lap2 = -(sx[3] * sy[0] * z + sx[1] * sy[2] * z - 2.0 * sx[1] * sy[0]);
    (grad, [-lap1, -lap2, 0.0])
}

fn eval_tensor(comp: &ComponentSpace<f64>, eta: [f64; 3]) -> Vec<(usize, f64, [f64; 3])> {
    let m = comp.full_dims();
    let ev: Vec<(usize, Vec<Vec<f64>>)> = (0..3)
        .map(|d| comp.spaces[d].eval_basis(eta[d], 1).unwrap())
        .collect();
    let mut out = Vec::new();
    for (j3, (v3, d3)) in ev[2].1[0].iter().zip(&ev[2].1[1]).enumerate() {
        for (j2, (v2, d2)) in ev[1].1[0].iter().zip(&ev[1].1[1]).enumerate() {
            for (j1, (v1, d1)) in ev[0].1[0].iter().zip(&ev[0].1[1]).enumerate() {
                let idx = (ev[0].0 + j1) + m[0] * ((ev[1].0 + j2) + m[1] * (ev[2].0 + j3));
                out.push((
                    idx,
                    v1 * v2 * v3,
                    [d1 * v2 * v3, v1 * d2 * v3, v1 * v2 * d3],
                ));
            }
        }
    }
    out
}

fn for_each_node(spaces: &StokesSpaces<f64>, mut f: impl FnMut([f64; 3], f64)) {
    let x = spaces.grid.nodes();
    let w = spaces.grid.weights();
    for i3 in 0..x.len() {
        for i2 in 0..x.len() {
            for i1 in 0..x.len() {
                f([x[i1], x[i2], x[i3]], w[i1] * w[i2] * w[i3]);
            }
        }
    }
}

fn h1_error(p: usize, n_el: usize) -> f64 {
    let spaces = StokesSpaces::<f64>::new(Discretization::TaylorHood, p, n_el, None, None).unwrap();
    let nu = ViscosityField::Constant(1.0);
    let sys = assemble_th(
        &spaces,
        &GeometryMap::Identity,
        &nu,
        &DirichletData::homogeneous(),
        BlockFormat::Auto,
    )
    .unwrap();
    let off = sys.u_offsets();
    let maps: Vec<Vec<Option<usize>>> = spaces.velocity.iter().map(|c| c.kept_map()).collect();
    let mut rhs = sys.rhs();
    for_each_node(&spaces, |eta, w| {
        let (_, f) = exact(eta);
        for k in 0..2 {
            for (i, v, _) in eval_tensor(&spaces.velocity[k], eta) {
                if let Some(j) = maps[k][i] {
                    rhs[off[k] + j] += f[k] * v * w;
                }
            }
        }
    });

    let pv = build_pv_plain(&spaces, None).unwrap();
    let pq = build_pq(&spaces).unwrap();
    let prec = BlockPreconditioner::new(BlockKind::Diagonal, &pv, &pq, &sys).unwrap();
    let opts = SolveOptions {
        tol: 1e-11,
        maxit: 2000,
    };
    let (x, rep) = minres(&sys, &rhs, Some(&prec), &opts).unwrap();
    assert!(rep.converged);

    let coeffs: Vec<Vec<f64>> = (0..3)
        .map(|k| sys.velocity_coefficients(k, &x[..sys.n_u()]))
        .collect();
    let mut err = 0.0;
    for_each_node(&spaces, |eta, w| {
        let (g, _) = exact(eta);
        for k in 0..3 {
            let mut gh = [0.0; 3];
            for (i, _, d) in eval_tensor(&spaces.velocity[k], eta) {
                for c in 0..3 {
                    gh[c] += coeffs[k][i] * d[c];
                }
            }
            err += (0..3).map(|c| (gh[c] - g[k][c]).powi(2)).sum::<f64>() * w;
        }
    });
    err.sqrt()
}

#[test]
fn manufactured_solution_h1_error_decreases_under_refinement() {
    let e: Vec<f64> = [2, 4, 8].iter().map(|&n| h1_error(2, n)).collect();
    assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
    // Cubic velocity: the H¹ error should drop by roughly 2³ per halving.
    assert!(e[1] / e[2] > 4.0, "{e:?}");
    println!("H1 errors {e:?}");
}
