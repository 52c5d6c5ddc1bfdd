use approx::assert_abs_diff_eq;
use stokes_fd::assembly::geometry::inv3;
use stokes_fd::assembly::{
    assemble_pressure_mass, assemble_rt_parametric, assemble_th, dirichlet_lifting, univariate_km,
    BlockFormat, ComponentSpace, DirichletData, Discretization, GeometryMap, StokesSpaces,
    StokesSystem, ViscosityField,
};
use stokes_fd::kron::KronOperator;
use stokes_fd::linalg::{symmetric_eigenvalues, DenseMatrix};
use stokes_fd::Error;

/// Brute-force full-basis matrices by point-wise quadrature.
struct Oracle {
    a: Vec<Vec<DenseMatrix<f64>>>,
    b: Vec<DenseMatrix<f64>>,
    q: DenseMatrix<f64>,
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

fn oracle(spaces: &StokesSpaces<f64>, geo: &GeometryMap<f64>, nu: &ViscosityField<f64>) -> Oracle {
    let vel = &spaces.velocity;
    let nv: Vec<usize> = vel.iter().map(|c| c.full_dim()).collect();
    let np = spaces.pressure.full_dim();
    let mut a: Vec<Vec<DenseMatrix<f64>>> = (0..3)
        .map(|r| (0..3).map(|s| DenseMatrix::zeros(nv[r], nv[s])).collect())
        .collect();
    let mut b: Vec<DenseMatrix<f64>> = (0..3).map(|r| DenseMatrix::zeros(np, nv[r])).collect();
    let mut q = DenseMatrix::zeros(np, np);
    let x = spaces.grid.nodes();
    let w = spaces.grid.weights();
    for i3 in 0..x.len() {
        for i2 in 0..x.len() {
            for i1 in 0..x.len() {
                let eta = [x[i1], x[i2], x[i3]];
                let (pt, j) = geo.eval(eta);
                let jinv = inv3(&j);
                let det = geo.det_jacobian(eta).abs();
                let wt = w[i1] * w[i2] * w[i3] * det;
                let nuv = nu.eval(pt);
                let phys = |g: [f64; 3]| -> [f64; 3] {
                    let mut o = [0.0; 3];
                    for c in 0..3 {
                        for a in 0..3 {
                            o[c] += jinv[a][c] * g[a];
                        }
                    }
                    o
                };
                let basis: Vec<Vec<(usize, f64, [f64; 3])>> = vel
                    .iter()
                    .map(|c| {
                        eval_tensor(c, eta)
                            .into_iter()
                            .map(|(i, v, g)| (i, v, phys(g)))
                            .collect()
                    })
                    .collect();
                let pres = eval_tensor(&spaces.pressure, eta);
                for r in 0..3 {
                    for s in 0..3 {
                        for (i, _, gi) in &basis[r] {
                            for (jj, _, gj) in &basis[s] {
                                let mut v = gi[s] * gj[r];
                                if r == s {
                                    v += gi[0] * gj[0] + gi[1] * gj[1] + gi[2] * gj[2];
                                }
                                a[r][s][(*i, *jj)] += nuv * v * wt;
                            }
                        }
                    }
                    for (l, rho, _) in &pres {
                        for (jj, _, gj) in &basis[r] {
                            b[r][(*l, *jj)] -= rho * gj[r] * wt;
                        }
                    }
                }
                for (l, rl, _) in &pres {
                    for (m, rm, _) in &pres {
                        q[(*l, *m)] += rl * rm * wt / nuv;
                    }
                }
            }
        }
    }
    Oracle { a, b, q }
}

fn kept(comp: &ComponentSpace<f64>) -> Vec<usize> {
    comp.kept_map()
        .iter()
        .enumerate()
        .filter_map(|(f, k)| k.map(|_| f))
        .collect()
}

fn max_rel_diff(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let scale = a.max_abs().max(b.max_abs()).max(1e-300);
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

fn check_against_oracle(sys: &StokesSystem<f64>, o: &Oracle, tol: f64) {
    let vel = &sys.spaces.velocity;
    let rows: Vec<Vec<usize>> = vel.iter().map(kept).collect();
    for r in 0..3 {
        for s in 0..3 {
            let got = sys.a_csr(r, s).unwrap().to_dense(100_000).unwrap();
            let want = DenseMatrix::from_fn(rows[r].len(), rows[s].len(), |i, j| {
                o.a[r][s][(rows[r][i], rows[s][j])]
            });
            let d = max_rel_diff(&got, &want);
            assert!(d < tol, "A_{r}{s} differs by {d:e}");
        }
        let got = sys.b[r].to_dense(100_000).unwrap();
        let want = DenseMatrix::from_fn(o.b[r].nrows(), rows[r].len(), |i, j| {
            o.b[r][(i, rows[r][j])]
        });
        let d = max_rel_diff(&got, &want);
        assert!(d < tol, "B_{r} differs by {d:e}");
    }
    let d = max_rel_diff(&sys.q.to_dense(100_000).unwrap(), &o.q);
    assert!(d < tol, "Q differs by {d:e}");
}

fn th_spaces(p: usize, n_el: usize) -> StokesSpaces<f64> {
    StokesSpaces::new(Discretization::TaylorHood, p, n_el, None, None).unwrap()
}

#[test]
fn th_cube_blocks_match_pointwise_quadrature() {
    let sp = th_spaces(1, 2);
    let nu = ViscosityField::Constant(1.0);
    let o = oracle(&sp, &GeometryMap::Identity, &nu);
    for format in [BlockFormat::Auto, BlockFormat::Sparse] {
        let sys = assemble_th(
            &sp,
            &GeometryMap::Identity,
            &nu,
            &DirichletData::cube_lid(),
            format,
        )
        .unwrap();
        check_against_oracle(&sys, &o, 1e-13);
    }
}

#[test]
fn th_annulus_blocks_match_pointwise_quadrature() {
    let sp = th_spaces(2, 2);
    let nu = ViscosityField::AngularVariation { k: 10.0 };
    let geo = GeometryMap::EighthAnnulus;
    let o = oracle(&sp, &geo, &nu);
    let sys = assemble_th(
        &sp,
        &geo,
        &nu,
        &DirichletData::annulus_driven(),
        BlockFormat::Auto,
    )
    .unwrap();
    check_against_oracle(&sys, &o, 1e-12);
}

#[test]
fn lifting_right_hand_side_is_block_elimination() {
    let sp = th_spaces(1, 3);
    let geo = GeometryMap::EighthAnnulus;
    let nu = ViscosityField::Constant(1.0);
    let data = DirichletData::annulus_driven();
    let o = oracle(&sp, &geo, &nu);
    let sys = assemble_th(&sp, &geo, &nu, &data, BlockFormat::Auto).unwrap();
    let g = dirichlet_lifting(&sp, &data);
    let off = sys.u_offsets();
    for r in 0..3 {
        let rows = kept(&sp.velocity[r]);
        for (i, &fi) in rows.iter().enumerate() {
            let mut want = 0.0;
            for s in 0..3 {
                for (j, gj) in g[s].iter().enumerate() {
                    want -= o.a[r][s][(fi, j)] * gj;
                }
            }
            assert_abs_diff_eq!(sys.rhs_u[off[r] + i], want, epsilon = 1e-12);
        }
    }
    for l in 0..sys.n_q() {
        let mut want = 0.0;
        for s in 0..3 {
            for (j, gj) in g[s].iter().enumerate() {
                want -= o.b[s][(l, j)] * gj;
            }
        }
        assert_abs_diff_eq!(sys.rhs_p[l], want, epsilon = 1e-12);
    }
}

#[test]
fn homogeneous_data_gives_zero_rhs_and_interior_counts() {
    let sp = th_spaces(2, 4);
    let sys = assemble_th(
        &sp,
        &GeometryMap::Identity,
        &ViscosityField::Constant(1.0),
        &DirichletData::homogeneous(),
        BlockFormat::Auto,
    )
    .unwrap();
    assert!(sys.rhs().iter().all(|v| *v == 0.0));
    let m = sp.velocity[0].spaces[0].dim();
    assert_eq!(m, 4 * 2 + 2);
    assert_eq!(sys.n_v(), [(m - 2).pow(3); 3]);
}

#[test]
fn lid_lifting_assigns_face_interior_dofs_only() {
    let sp = th_spaces(2, 2);
    let g = dirichlet_lifting(&sp, &DirichletData::<f64>::cube_lid());
    let m = sp.velocity[0].spaces[0].dim();
    let at = |i1: usize, i2: usize, i3: usize| g[0][i1 + m * (i2 + m * i3)];
    assert_eq!(at(1, 1, m - 1), 1.0);
    assert_eq!(at(1, 1, 0), -1.0);
    assert_eq!(at(0, 1, m - 1), 0.0);
    assert_eq!(at(1, 1, 1), 0.0);
    assert!(g[1].iter().chain(&g[2]).all(|v| *v == 0.0));
    let count = g[0].iter().filter(|v| **v != 0.0).count();
    assert_eq!(count, 2 * (m - 2) * (m - 2));
}

#[test]
fn th_identity_diagonal_blocks_equal_kronecker_sums() {
    for (p, n_el) in [(1, 3), (2, 2), (3, 2)] {
        let sp = th_spaces(p, n_el);
        let sys = assemble_th(
            &sp,
            &GeometryMap::Identity,
            &ViscosityField::Constant(1.0),
            &DirichletData::homogeneous(),
            BlockFormat::Sparse,
        )
        .unwrap();
        let f = univariate_km(&sp.velocity[0].spaces[0], None, None, &sp.grid, true).unwrap();
        let n = f.k.nrows();
        for k in 0..3 {
            let mut op = KronOperator::new([n, n, n]);
            for d in 0..3 {
                let fac = |e: usize| if e == d { f.k.clone() } else { f.m.clone() };
                op.push(if d == k { 2.0 } else { 1.0 }, fac(2), fac(1), fac(0))
                    .unwrap();
            }
            let want = op.to_dense().unwrap();
            let got = sys.a_csr(k, k).unwrap().to_dense(10_000).unwrap();
            let d = max_rel_diff(&got, &want);
            assert!(d <= 1e-12, "p={p} n_el={n_el} k={k}: {d:e}");
        }
    }
}

#[test]
fn constants_are_orthogonal_to_divergence_on_identity() {
    for disc in [Discretization::TaylorHood, Discretization::RaviartThomas] {
        let sp = StokesSpaces::new(disc, 2, 3, None, None).unwrap();
        let geo = GeometryMap::Identity;
        let nu = ViscosityField::Constant(1.0);
        let data = DirichletData::homogeneous();
        let sys = match disc {
            Discretization::TaylorHood => assemble_th(&sp, &geo, &nu, &data, BlockFormat::Auto),
            Discretization::RaviartThomas => assemble_rt_parametric(&sp, &geo, &nu, &data, None),
        }
        .unwrap();
        let ones = vec![1.0; sys.n_q()];
        let mut y = vec![0.0; sys.n_u()];
        sys.apply_bt_add(1.0, &ones, &mut y);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-12, "{disc:?}: ‖1ᵀB‖ = {norm:e}");
    }
}

#[test]
fn pressure_mass_identity_scaling_and_sign() {
    let sp = th_spaces(2, 2);
    let geo = GeometryMap::Identity;
    let q1 = assemble_pressure_mass(
        &sp,
        &geo,
        &ViscosityField::Constant(1.0),
        BlockFormat::Sparse,
    )
    .unwrap()
    .to_dense(1000)
    .unwrap();
    let f = univariate_km(&sp.pressure.spaces[0], None, None, &sp.grid, false).unwrap();
    let mm = KronOperator::single(f.m.clone(), f.m.clone(), f.m)
        .unwrap()
        .to_dense()
        .unwrap();
    assert!(max_rel_diff(&q1, &mm) <= 1e-13);
    let q2 = assemble_pressure_mass(&sp, &geo, &ViscosityField::Constant(2.0), BlockFormat::Auto)
        .unwrap()
        .to_dense(1000)
        .unwrap();
    assert!(max_rel_diff(&q2, &mm.scaled(0.5)) <= 1e-13);
    let qa = assemble_pressure_mass(
        &sp,
        &GeometryMap::EighthAnnulus,
        &ViscosityField::Constant(1.0),
        BlockFormat::Auto,
    )
    .unwrap()
    .to_dense(1000)
    .unwrap();
    assert!(qa.as_slice().iter().all(|v| *v >= 0.0));
    assert!(stokes_fd::linalg::Cholesky::factor(&qa).is_ok());
}

#[test]
fn saddle_point_matrices_are_symmetric_with_spd_velocity_block() {
    let cases: Vec<(Discretization, GeometryMap<f64>, ViscosityField<f64>)> = vec![
        (
            Discretization::TaylorHood,
            GeometryMap::Identity,
            ViscosityField::Constant(1.0),
        ),
        (
            Discretization::TaylorHood,
            GeometryMap::EighthAnnulus,
            ViscosityField::AngularVariation { k: 5.0 },
        ),
        (
            Discretization::RaviartThomas,
            GeometryMap::Identity,
            ViscosityField::Constant(1.0),
        ),
    ];
    for (disc, geo, nu) in cases {
        for n_el in [2, 3] {
            let sp = StokesSpaces::new(disc, 2, n_el, None, None).unwrap();
            let sys = match disc {
                Discretization::TaylorHood => assemble_th(
                    &sp,
                    &geo,
                    &nu,
                    &DirichletData::homogeneous(),
                    BlockFormat::Auto,
                ),
                Discretization::RaviartThomas => {
                    assemble_rt_parametric(&sp, &geo, &nu, &DirichletData::cube_lid(), None)
                }
            }
            .unwrap();
            let full = sys.to_dense(5000).unwrap();
            assert!(
                full.is_symmetric(0.0),
                "{disc:?} n_el={n_el} not exactly symmetric"
            );
            let n = sys.n_u();
            let a = DenseMatrix::from_fn(n, n, |i, j| full[(i, j)]);
            let lmin = symmetric_eigenvalues(&a).unwrap()[0];
            assert!(lmin > 0.0, "{disc:?} n_el={n_el}: λ_min(A) = {lmin:e}");
        }
    }
}

#[test]
fn rt_dimensions_and_guard() {
    let (p, n_el) = (2usize, 4usize);
    let sp = StokesSpaces::<f64>::new(Discretization::RaviartThomas, p, n_el, None, None).unwrap();
    let alpha = p - 1;
    let m_hi = n_el * (p + 1 - (alpha + 1)) + alpha + 2;
    let m_lo = n_el * (p - alpha) + alpha + 1;
    assert_eq!(sp.n_v()[0], (m_hi - 2) * m_lo * m_lo);
    assert_eq!(sp.n_v(), [sp.n_v()[0]; 3]);
    assert_eq!(sp.n_q(), m_lo.pow(3));
    let err = assemble_rt_parametric(
        &sp,
        &GeometryMap::EighthAnnulus,
        &ViscosityField::Constant(1.0),
        &DirichletData::homogeneous(),
        None,
    );
    assert!(matches!(err, Err(Error::Unsupported(_))));
}

#[test]
fn rt_tangential_load_is_antisymmetric_for_the_lid() {
    let sp = StokesSpaces::<f64>::new(Discretization::RaviartThomas, 2, 3, None, None).unwrap();
    let sys = assemble_rt_parametric(
        &sp,
        &GeometryMap::Identity,
        &ViscosityField::Constant(1.0),
        &DirichletData::cube_lid(),
        None,
    )
    .unwrap();
    let off = sys.u_offsets();
    assert!(sys.rhs_u[off[1]..].iter().all(|v| *v == 0.0));
    let [n1, n2, n3] = sp.velocity[0].dims();
    let u1 = &sys.rhs_u[..off[1]];
    for i3 in 0..n3 {
        for i2 in 0..n2 {
            for i1 in 0..n1 {
                let a = u1[i1 + n1 * (i2 + n2 * i3)];
                let b = u1[i1 + n1 * (i2 + n2 * (n3 - 1 - i3))];
                assert_abs_diff_eq!(a, -b, epsilon = 1e-12);
            }
        }
    }
    assert!(u1.iter().any(|v| *v != 0.0));
    assert!(sys.rhs_p.iter().all(|v| *v == 0.0));
}

#[test]
fn nonpositive_viscosity_is_reported() {
    let sp = th_spaces(1, 2);
    let nu = ViscosityField::callable(|x: [f64; 3]| x[0] - 0.5);
    let r = assemble_th(
        &sp,
        &GeometryMap::Identity,
        &nu,
        &DirichletData::homogeneous(),
        BlockFormat::Auto,
    );
    assert!(matches!(r, Err(Error::Viscosity(_))));
}
