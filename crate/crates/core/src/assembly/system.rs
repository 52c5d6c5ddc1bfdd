use serde::{Deserialize, Serialize};

use crate::assembly::geometry::{det3, inv3, GeometryMap, Mat3, ViscosityField};
use crate::assembly::tensor::{assemble_form, BlockMatrix, DirectionPairs, FormTerm, KronBlock};
use crate::assembly::univariate::{kept_indices, univariate_km, univariate_km_nitsche};
use crate::error::{Error, Result};
use crate::kron::kron3_apply;
use crate::linalg::{CsrMatrix, DenseMatrix};
use crate::scalar::Real;
use crate::splines::{QuadGrid, SplineSpace};

/// Velocity/pressure pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Discretization {
    #[serde(rename = "th")]
    TaylorHood,
    #[serde(rename = "rt")]
    RaviartThomas,
}

impl Discretization {
    pub fn tag(self) -> &'static str {
        match self {
            Self::TaylorHood => "th",
            Self::RaviartThomas => "rt",
        }
    }
}

/// Tensor-product space of one scalar field; `interior[d]` drops the first and
/// last univariate function in direction `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentSpace<T> {
    pub spaces: [SplineSpace<T>; 3],
    pub interior: [bool; 3],
}

impl<T: Real> ComponentSpace<T> {
    pub fn kept(&self, d: usize) -> Vec<usize> {
        kept_indices(self.spaces[d].dim(), self.interior[d])
    }

    pub fn all(&self, d: usize) -> Vec<usize> {
        kept_indices(self.spaces[d].dim(), false)
    }

    /// Numbers of kept functions per direction.
    pub fn dims(&self) -> [usize; 3] {
        let n = |d: usize| self.spaces[d].dim() - 2 * self.interior[d] as usize;
        [n(0), n(1), n(2)]
    }

    pub fn full_dims(&self) -> [usize; 3] {
        [
            self.spaces[0].dim(),
            self.spaces[1].dim(),
            self.spaces[2].dim(),
        ]
    }

    pub fn dim(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn full_dim(&self) -> usize {
        self.full_dims().iter().product()
    }

    /// Map from full tensor index to kept tensor index.
    pub fn kept_map(&self) -> Vec<Option<usize>> {
        let [m1, m2, m3] = self.full_dims();
        let [n1, n2, _] = self.dims();
        let off = |d: usize| self.interior[d] as usize;
        let inside = |d: usize, i: usize, m: usize| !self.interior[d] || (i > 0 && i + 1 < m);
        let mut map = Vec::with_capacity(m1 * m2 * m3);
        for i3 in 0..m3 {
            for i2 in 0..m2 {
                for i1 in 0..m1 {
                    map.push(
                        (inside(0, i1, m1) && inside(1, i2, m2) && inside(2, i3, m3))
                            .then(|| (i1 - off(0)) + n1 * ((i2 - off(1)) + n2 * (i3 - off(2)))),
                    );
                }
            }
        }
        map
    }
}

/// Discrete velocity and pressure spaces on `[0,1]^3` with a shared
/// quadrature grid.
#[derive(Clone, Debug)]
pub struct StokesSpaces<T> {
    pub disc: Discretization,
    /// Pressure degree `p`.
    pub degree: usize,
    pub regularity: isize,
    pub n_el: usize,
    pub grid: QuadGrid<T>,
    pub velocity: [ComponentSpace<T>; 3],
    pub pressure: ComponentSpace<T>,
}

impl<T: Real> StokesSpaces<T> {
    /// Pressure degree `p ≥ 1` with regularity `α` (default `p − 1`) and `q`
    /// Gauss points per element (default `p + 2`).
    pub fn new(
        disc: Discretization,
        degree: usize,
        n_el: usize,
        regularity: Option<isize>,
        quad_points: Option<usize>,
    ) -> Result<Self> {
        let p = degree;
        if p < 1 {
            return Err(Error::Parameter(
                "pressure degree must be at least 1".into(),
            ));
        }
        let alpha = regularity.unwrap_or(p as isize - 1);
        if alpha < 0 || alpha > p as isize - 1 {
            return Err(Error::Parameter(format!(
                "regularity {alpha} outside [0, {}]",
                p - 1
            )));
        }
        let q = quad_points.unwrap_or(p + 2);
        if q < p + 2 {
            return Err(Error::Parameter(format!(
                "{q} quadrature points cannot integrate degree {}",
                2 * p + 2
            )));
        }
        let grid = QuadGrid::new(n_el, q)?;
        let sp = |deg: usize, reg: isize| SplineSpace::new(deg, n_el, reg);
        let pres = sp(p, alpha)?;
        let velocity = match disc {
            Discretization::TaylorHood => {
                let v = sp(p + 1, alpha)?;
                let c = ComponentSpace {
                    spaces: [v.clone(), v.clone(), v],
                    interior: [true; 3],
                };
                [c.clone(), c.clone(), c]
            }
            Discretization::RaviartThomas => {
                let hi = sp(p + 1, alpha + 1)?;
                let comp = |k: usize| {
                    let mut spaces = [pres.clone(), pres.clone(), pres.clone()];
                    spaces[k] = hi.clone();
                    let mut interior = [false; 3];
                    interior[k] = true;
                    ComponentSpace { spaces, interior }
                };
                [comp(0), comp(1), comp(2)]
            }
        };
        Ok(Self {
            disc,
            degree: p,
            regularity: alpha,
            n_el,
            grid,
            velocity,
            pressure: ComponentSpace {
                spaces: [pres.clone(), pres.clone(), pres],
                interior: [false; 3],
            },
        })
    }

    pub fn n_v(&self) -> [usize; 3] {
        [
            self.velocity[0].dim(),
            self.velocity[1].dim(),
            self.velocity[2].dim(),
        ]
    }

    pub fn n_u(&self) -> usize {
        self.n_v().iter().sum()
    }

    pub fn n_q(&self) -> usize {
        self.pressure.dim()
    }

    /// Default Nitsche parameter `5(α + 1)`.
    pub fn default_penalty(&self) -> T {
        T::lit(5.0 * (self.regularity + 1) as f64)
    }
}

/// Constant velocity prescribed on each face; `faces[d][s]` is the face
/// `η_{d+1} = s`. Zero vectors denote homogeneous data.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletData<T> {
    pub faces: [[[T; 3]; 2]; 3],
}

impl<T: Real> DirichletData<T> {
    pub fn homogeneous() -> Self {
        Self {
            faces: [[[T::zero(); 3]; 2]; 3],
        }
    }

    /// Top face `η3 = 1` moves with `(1,0,0)`, bottom face with `(−1,0,0)`.
    pub fn cube_lid() -> Self {
        let mut d = Self::homogeneous();
        d.faces[2][1] = [T::one(), T::zero(), T::zero()];
        d.faces[2][0] = [-T::one(), T::zero(), T::zero()];
        d
    }

    /// The two planar faces `η2 = 0` and `η2 = 1` of the annulus section move
    /// tangentially with unit speed in opposite angular senses.
    pub fn annulus_driven() -> Self {
        let mut d = Self::homogeneous();
        let s = T::FRAC_1_SQRT_2();
        d.faces[1][0] = [-T::one(), T::zero(), T::zero()];
        d.faces[1][1] = [s, s, T::zero()];
        d
    }

    pub fn with_face(mut self, direction: usize, side: usize, value: [T; 3]) -> Result<Self> {
        if direction > 2 || side > 1 {
            return Err(Error::Parameter(format!(
                "face ({direction}, {side}) does not exist"
            )));
        }
        self.faces[direction][side] = value;
        Ok(self)
    }

    pub fn is_homogeneous(&self) -> bool {
        self.faces
            .iter()
            .flatten()
            .flatten()
            .all(|v| *v == T::zero())
    }

    pub fn component_is_zero(&self, k: usize) -> bool {
        self.faces.iter().flatten().all(|f| f[k] == T::zero())
    }
}

/// Strong lifting coefficients on the full velocity bases: face values are
/// assigned to dofs strictly interior to the face; edges and corners stay zero.
pub fn dirichlet_lifting<T: Real>(
    spaces: &StokesSpaces<T>,
    data: &DirichletData<T>,
) -> [Vec<T>; 3] {
    let mut out: [Vec<T>; 3] = Default::default();
    for (k, g) in out.iter_mut().enumerate() {
        let comp = &spaces.velocity[k];
        let m = comp.full_dims();
        *g = vec![T::zero(); comp.full_dim()];
        for d in 0..3 {
            for side in 0..2 {
                let v = data.faces[d][side][k];
                if v == T::zero() {
                    continue;
                }
                let fixed = if side == 0 { 0 } else { m[d] - 1 };
                for i3 in 0..m[2] {
                    for i2 in 0..m[1] {
                        for i1 in 0..m[0] {
                            let idx = [i1, i2, i3];
                            let ok = (0..3).all(|e| {
                                if e == d {
                                    idx[e] == fixed
                                } else {
                                    idx[e] > 0 && idx[e] + 1 < m[e]
                                }
                            });
                            if ok {
                                g[i1 + m[0] * (i2 + m[1] * i3)] = v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Geometry and viscosity sampled at the tensor quadrature grid (`q1` fastest).
#[derive(Clone, Debug)]
pub struct GridSamples<T> {
    pub npts: [usize; 3],
    pub jinv: Vec<Mat3<T>>,
    /// `|det J_G|`
    pub det: Vec<T>,
    pub nu: Vec<T>,
}

impl<T: Real> GridSamples<T> {
    pub fn new(
        geometry: &GeometryMap<T>,
        viscosity: &ViscosityField<T>,
        grid: &QuadGrid<T>,
    ) -> Result<Self> {
        let x = grid.nodes();
        let n = x.len();
        let mut jinv = Vec::with_capacity(n * n * n);
        let mut det = Vec::with_capacity(n * n * n);
        let mut nu = Vec::with_capacity(n * n * n);
        for i3 in 0..n {
            for i2 in 0..n {
                for i1 in 0..n {
                    let eta = [x[i1], x[i2], x[i3]];
                    let (pt, j) = geometry.eval(eta);
                    let dj = det3(&j);
                    let scale = j.iter().flatten().fold(T::zero(), |m, v| m.max(v.abs()));
                    if !dj.is_finite() || dj.abs() <= T::lit(1e-12) * scale * scale * scale {
                        return Err(Error::Geometry(format!(
                            "singular Jacobian at quadrature node ({}, {}, {})",
                            eta[0].as_f64(),
                            eta[1].as_f64(),
                            eta[2].as_f64()
                        )));
                    }
                    jinv.push(inv3(&j));
                    det.push(dj.abs());
                    nu.push(viscosity.eval_checked(pt)?);
                }
            }
        }
        Ok(Self {
            npts: [n, n, n],
            jinv,
            det,
            nu,
        })
    }

    pub fn len(&self) -> usize {
        self.det.len()
    }

    pub fn is_empty(&self) -> bool {
        self.det.is_empty()
    }
}

/// Block storage format requested from the assembler.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BlockFormat {
    /// Kronecker blocks whenever the integrands are constant, sparse otherwise.
    #[default]
    Auto,
    Sparse,
}

/// Discrete Stokes saddle-point system `[[A, Bᵀ], [B, 0]]` with right-hand
/// side, after elimination of strongly imposed boundary values.
#[derive(Clone, Debug)]
pub struct StokesSystem<T> {
    pub spaces: StokesSpaces<T>,
    /// Blocks `A_rs` for `r ≤ s`, row-major over the upper triangle.
    a_upper: Vec<BlockMatrix<T>>,
    pub b: [BlockMatrix<T>; 3],
    pub q: BlockMatrix<T>,
    pub rhs_u: Vec<T>,
    pub rhs_p: Vec<T>,
    pub c_pen: Option<T>,
    /// Strong boundary values on the full velocity bases.
    pub lifting: [Vec<T>; 3],
    /// `∫ ρ_i |det J_G|`, used to normalize the pressure mean.
    pub pressure_weights: Vec<T>,
}

fn upper_index(r: usize, s: usize) -> usize {
    debug_assert!(r <= s && s < 3);
    [[0, 1, 2], [0, 3, 4], [0, 0, 5]][r][s]
}

impl<T: Real> StokesSystem<T> {
    pub fn disc(&self) -> Discretization {
        self.spaces.disc
    }

    pub fn n_v(&self) -> [usize; 3] {
        self.spaces.n_v()
    }

    pub fn n_u(&self) -> usize {
        self.spaces.n_u()
    }

    pub fn n_q(&self) -> usize {
        self.spaces.n_q()
    }

    pub fn dim(&self) -> usize {
        self.n_u() + self.n_q()
    }

    /// Start offsets of the velocity components inside a velocity vector.
    pub fn u_offsets(&self) -> [usize; 4] {
        let n = self.n_v();
        [0, n[0], n[0] + n[1], n[0] + n[1] + n[2]]
    }

    /// Block `A_rs` and whether it is stored transposed (`A_rs = A_srᵀ`).
    pub fn a_block(&self, r: usize, s: usize) -> (&BlockMatrix<T>, bool) {
        if r <= s {
            (&self.a_upper[upper_index(r, s)], false)
        } else {
            (&self.a_upper[upper_index(s, r)], true)
        }
    }

    /// `y = A x` on the velocity unknowns.
    pub fn apply_a(&self, x: &[T], y: &mut [T]) {
        let o = self.u_offsets();
        y.fill(T::zero());
        for r in 0..3 {
            for s in 0..3 {
                let (blk, tr) = self.a_block(r, s);
                let (xs, ys) = (&x[o[s]..o[s + 1]], &mut y[o[r]..o[r + 1]]);
                if tr {
                    blk.transpose_matvec_add(T::one(), xs, ys);
                } else {
                    blk.matvec_add(T::one(), xs, ys);
                }
            }
        }
    }

    /// `y = B x_u`
    pub fn apply_b(&self, x: &[T], y: &mut [T]) {
        let o = self.u_offsets();
        y.fill(T::zero());
        for r in 0..3 {
            self.b[r].matvec_add(T::one(), &x[o[r]..o[r + 1]], y);
        }
    }

    /// `y += alpha Bᵀ x_p`
    pub fn apply_bt_add(&self, alpha: T, x: &[T], y: &mut [T]) {
        let o = self.u_offsets();
        for r in 0..3 {
            self.b[r].transpose_matvec_add(alpha, x, &mut y[o[r]..o[r + 1]]);
        }
    }

    /// Full saddle-point product on `x = (u, p)`.
    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        let nu = self.n_u();
        let (xu, xp) = x.split_at(nu);
        let (yu, yp) = y.split_at_mut(nu);
        self.apply_a(xu, yu);
        self.apply_bt_add(T::one(), xp, yu);
        self.apply_b(xu, yp);
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.dim()];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn rhs(&self) -> Vec<T> {
        let mut r = self.rhs_u.clone();
        r.extend_from_slice(&self.rhs_p);
        r
    }

    /// Diagonal of `A` over all velocity unknowns.
    pub fn a_diagonal(&self) -> Vec<T> {
        (0..3)
            .flat_map(|k| self.a_block(k, k).0.diagonal())
            .collect()
    }

    /// Explicit sparse `A_rs`.
    pub fn a_csr(&self, r: usize, s: usize) -> Result<CsrMatrix<T>> {
        let (blk, tr) = self.a_block(r, s);
        let m = blk.to_csr()?;
        Ok(if tr { m.transpose() } else { m })
    }

    /// Dense saddle-point matrix, refused above `limit` rows.
    pub fn to_dense(&self, limit: usize) -> Result<DenseMatrix<T>> {
        let n = self.dim();
        if n > limit {
            return Err(Error::SizeGuard { dim: n, limit });
        }
        let o = self.u_offsets();
        let nu = self.n_u();
        let mut out = DenseMatrix::zeros(n, n);
        for r in 0..3 {
            for s in 0..3 {
                let blk = self.a_csr(r, s)?;
                for i in 0..blk.nrows() {
                    let (cols, vals) = blk.row(i);
                    for (c, v) in cols.iter().zip(vals) {
                        out[(o[r] + i, o[s] + *c as usize)] = *v;
                    }
                }
            }
            let b = self.b[r].to_csr()?;
            for i in 0..b.nrows() {
                let (cols, vals) = b.row(i);
                for (c, v) in cols.iter().zip(vals) {
                    out[(nu + i, o[r] + *c as usize)] = *v;
                    out[(o[r] + *c as usize, nu + i)] = *v;
                }
            }
        }
        Ok(out)
    }

    /// Shifts `p` so that `∫ p |det J_G| = 0`.
    pub fn zero_mean_pressure(&self, p: &mut [T]) {
        let total: T = self.pressure_weights.iter().copied().sum();
        let mean = crate::scalar::dot(&self.pressure_weights, p) / total;
        for v in p.iter_mut() {
            *v -= mean;
        }
    }

    /// Full coefficient vector of velocity component `k` (boundary values
    /// included) from the stacked interior velocity unknowns `u` of length `n_u`.
    pub fn velocity_coefficients(&self, k: usize, u: &[T]) -> Vec<T> {
        let o = self.u_offsets();
        let mut full = self.lifting[k].clone();
        for (f, m) in self.spaces.velocity[k].kept_map().iter().enumerate() {
            if let Some(i) = m {
                full[f] = u[o[k] + i];
            }
        }
        full
    }
}

enum Integrand<T> {
    /// `(test_deriv, trial_deriv, coefficient)` with constant coefficients.
    Constant(Vec<(usize, usize, T)>),
    Sampled(Vec<FormTerm<T>>),
}

fn build_block<T: Real>(
    test: &ComponentSpace<T>,
    trial: &ComponentSpace<T>,
    trial_all: bool,
    grid: &QuadGrid<T>,
    integrand: Integrand<T>,
) -> Result<BlockMatrix<T>> {
    let mut dirs = Vec::with_capacity(3);
    for d in 0..3 {
        let cols = if trial_all {
            trial.all(d)
        } else {
            trial.kept(d)
        };
        dirs.push(DirectionPairs::new(
            &test.spaces[d],
            &test.kept(d),
            &trial.spaces[d],
            &cols,
            grid,
        )?);
    }
    let dirs: [DirectionPairs<T>; 3] = dirs
        .try_into()
        .map_err(|_| Error::Shape("direction count".into()))?;
    match integrand {
        Integrand::Sampled(terms) => Ok(BlockMatrix::Sparse(assemble_form(&dirs, &terms)?)),
        Integrand::Constant(terms) => {
            let rows = [dirs[0].n_rows(), dirs[1].n_rows(), dirs[2].n_rows()];
            let cols = [dirs[0].n_cols(), dirs[1].n_cols(), dirs[2].n_cols()];
            let mut blk = KronBlock::new(rows, cols);
            for (a, b, c) in terms {
                if c == T::zero() {
                    continue;
                }
                let f = |d: usize| dirs[d].integrate(a == d + 1, b == d + 1, None);
                blk.push(c, [f(0), f(1), f(2)])?;
            }
            Ok(BlockMatrix::Kron(blk))
        }
    }
}

/// Coefficient of `∂_a ψ ∂_b φ` in block `(r, s)` of the mapped
/// symmetric-gradient form, at one sample.
fn velocity_coefficient<T: Real>(jinv: &Mat3<T>, r: usize, s: usize, a: usize, b: usize) -> T {
    let mut v = jinv[a][s] * jinv[b][r];
    if r == s {
        for c in 0..3 {
            v += jinv[a][c] * jinv[b][c];
        }
    }
    v
}

fn velocity_integrand<T: Real>(
    samples: Option<&GridSamples<T>>,
    nu: T,
    r: usize,
    s: usize,
) -> Integrand<T> {
    match samples {
        None => {
            let id: Mat3<T> = crate::assembly::geometry::identity3();
            let mut terms = Vec::new();
            for a in 0..3 {
                for b in 0..3 {
                    let c = velocity_coefficient(&id, r, s, a, b);
                    if c != T::zero() {
                        terms.push((a + 1, b + 1, nu * c));
                    }
                }
            }
            Integrand::Constant(terms)
        }
        Some(g) => {
            let mut terms = Vec::new();
            for a in 0..3 {
                for b in 0..3 {
                    let coeff: Vec<T> = (0..g.len())
                        .map(|i| g.nu[i] * g.det[i] * velocity_coefficient(&g.jinv[i], r, s, a, b))
                        .collect();
                    if coeff.iter().any(|v| *v != T::zero()) {
                        terms.push(FormTerm {
                            test_deriv: a + 1,
                            trial_deriv: b + 1,
                            coeff,
                        });
                    }
                }
            }
            Integrand::Sampled(terms)
        }
    }
}

fn divergence_integrand<T: Real>(samples: Option<&GridSamples<T>>, r: usize) -> Integrand<T> {
    match samples {
        None => Integrand::Constant(vec![(0, r + 1, -T::one())]),
        Some(g) => {
            let mut terms = Vec::new();
            for b in 0..3 {
                let coeff: Vec<T> = (0..g.len()).map(|i| -g.jinv[i][b][r] * g.det[i]).collect();
                if coeff.iter().any(|v| *v != T::zero()) {
                    terms.push(FormTerm {
                        test_deriv: 0,
                        trial_deriv: b + 1,
                        coeff,
                    });
                }
            }
            Integrand::Sampled(terms)
        }
    }
}

/// `∫ ρ_i g` for the pressure basis with `g` sampled on the tensor grid.
fn pressure_integrals<T: Real>(
    pressure: &ComponentSpace<T>,
    grid: &QuadGrid<T>,
    g: Option<&[T]>,
) -> Result<Vec<T>> {
    let sp = &pressure.spaces[0];
    let tab = sp.tabulate(grid, 0)?;
    let n = grid.len();
    let r = DenseMatrix::from_fn(sp.dim(), n, |i, pt| {
        let f = tab.first(pt);
        if i >= f && i <= f + sp.degree() {
            tab.values(0, pt)[i - f] * grid.weights()[pt]
        } else {
            T::zero()
        }
    });
    match g {
        Some(g) => kron3_apply(&r, &r, &r, g),
        None => {
            let v: Vec<T> = (0..sp.dim())
                .map(|i| r.row(i).iter().copied().sum())
                .collect();
            let mut out = Vec::with_capacity(v.len().pow(3));
            for c3 in &v {
                for c2 in &v {
                    for c1 in &v {
                        out.push(*c3 * *c2 * *c1);
                    }
                }
            }
            Ok(out)
        }
    }
}

fn requires_sampling<T: Real>(
    geometry: &GeometryMap<T>,
    viscosity: &ViscosityField<T>,
    format: BlockFormat,
) -> bool {
    format == BlockFormat::Sparse || !geometry.is_identity() || viscosity.as_constant().is_none()
}

/// Weighted pressure mass `Q[i,j] = ∫ ν⁻¹ ρ_i ρ_j g` with `g = |det J_G|`
/// (TH) or `|det J_G|⁻¹` (RT).
pub fn assemble_pressure_mass<T: Real>(
    spaces: &StokesSpaces<T>,
    geometry: &GeometryMap<T>,
    viscosity: &ViscosityField<T>,
    format: BlockFormat,
) -> Result<BlockMatrix<T>> {
    let samples = if requires_sampling(geometry, viscosity, format) {
        Some(GridSamples::new(geometry, viscosity, &spaces.grid)?)
    } else {
        None
    };
    pressure_mass_from(spaces, samples.as_ref(), viscosity)
}

fn pressure_mass_from<T: Real>(
    spaces: &StokesSpaces<T>,
    samples: Option<&GridSamples<T>>,
    viscosity: &ViscosityField<T>,
) -> Result<BlockMatrix<T>> {
    let p = &spaces.pressure;
    let integrand = match samples {
        None => {
            let nu = viscosity.as_constant().ok_or_else(|| {
                Error::Unsupported("Kronecker pressure mass needs constant viscosity".into())
            })?;
            Integrand::Constant(vec![(0, 0, T::one() / nu)])
        }
        Some(g) => {
            let coeff = (0..g.len())
                .map(|i| match spaces.disc {
                    Discretization::TaylorHood => g.det[i] / g.nu[i],
                    Discretization::RaviartThomas => T::one() / (g.det[i] * g.nu[i]),
                })
                .collect();
            Integrand::Sampled(vec![FormTerm {
                test_deriv: 0,
                trial_deriv: 0,
                coeff,
            }])
        }
    };
    let q = build_block(p, p, false, &spaces.grid, integrand)?;
    Ok(match q {
        BlockMatrix::Sparse(m) => BlockMatrix::Sparse(m.symmetrized()?),
        other => other,
    })
}

/// Taylor–Hood system on a mapped geometry with strongly imposed Dirichlet data.
pub fn assemble_th<T: Real>(
    spaces: &StokesSpaces<T>,
    geometry: &GeometryMap<T>,
    viscosity: &ViscosityField<T>,
    data: &DirichletData<T>,
    format: BlockFormat,
) -> Result<StokesSystem<T>> {
    if spaces.disc != Discretization::TaylorHood {
        return Err(Error::Parameter(
            "Taylor–Hood assembly needs Taylor–Hood spaces".into(),
        ));
    }
    let grid = &spaces.grid;
    let samples = if requires_sampling(geometry, viscosity, format) {
        Some(GridSamples::new(geometry, viscosity, grid)?)
    } else {
        None
    };
    let nu = viscosity.as_constant().unwrap_or(T::one());
    let lifting = dirichlet_lifting(spaces, data);
    let lifted: Vec<bool> = (0..3).map(|k| !data.component_is_zero(k)).collect();
    let vel = &spaces.velocity;
    let o = {
        let n = spaces.n_v();
        [0, n[0], n[0] + n[1], n[0] + n[1] + n[2]]
    };
    let mut rhs_u = vec![T::zero(); spaces.n_u()];
    let mut rhs_p = vec![T::zero(); spaces.n_q()];

    let mut a_upper: Vec<Option<BlockMatrix<T>>> = vec![None, None, None, None, None, None];
    for r in 0..3 {
        for s in 0..3 {
            if r > s && !lifted[s] {
                continue;
            }
            let integrand = velocity_integrand(samples.as_ref(), nu, r, s);
            let blk = build_block(&vel[r], &vel[s], lifted[s], grid, integrand)?;
            let blk = if lifted[s] {
                blk.matvec_add(-T::one(), &lifting[s], &mut rhs_u[o[r]..o[r + 1]]);
                if r > s {
                    continue;
                }
                restrict_columns(
                    blk,
                    &vel[s],
                    grid,
                    || velocity_integrand(samples.as_ref(), nu, r, s),
                    &vel[r],
                )?
            } else {
                blk
            };
            let blk = match (r == s, blk) {
                (true, BlockMatrix::Sparse(m)) => BlockMatrix::Sparse(m.symmetrized()?),
                (_, other) => other,
            };
            a_upper[upper_index(r, s)] = Some(blk);
        }
    }

    let mut b = Vec::with_capacity(3);
    for r in 0..3 {
        let integrand = divergence_integrand(samples.as_ref(), r);
        let blk = build_block(&spaces.pressure, &vel[r], lifted[r], grid, integrand)?;
        let blk = if lifted[r] {
            blk.matvec_add(-T::one(), &lifting[r], &mut rhs_p);
            restrict_columns(
                blk,
                &vel[r],
                grid,
                || divergence_integrand(samples.as_ref(), r),
                &spaces.pressure,
            )?
        } else {
            blk
        };
        b.push(blk);
    }

    let q = pressure_mass_from(spaces, samples.as_ref(), viscosity)?;
    let det: Option<Vec<T>> = samples.as_ref().map(|g| g.det.clone());
    let pressure_weights = pressure_integrals(&spaces.pressure, grid, det.as_deref())?;
    Ok(StokesSystem {
        spaces: spaces.clone(),
        a_upper: a_upper
            .into_iter()
            .map(|b| b.expect("upper block assembled"))
            .collect(),
        b: b.try_into()
            .map_err(|_| Error::Shape("divergence blocks".into()))?,
        q,
        rhs_u,
        rhs_p,
        c_pen: None,
        lifting,
        pressure_weights,
    })
}

/// Drops the boundary columns of a block assembled against the full trial
/// basis. Kronecker blocks are rebuilt on the kept columns instead.
fn restrict_columns<T: Real>(
    blk: BlockMatrix<T>,
    trial: &ComponentSpace<T>,
    grid: &QuadGrid<T>,
    integrand: impl FnOnce() -> Integrand<T>,
    test: &ComponentSpace<T>,
) -> Result<BlockMatrix<T>> {
    match blk {
        BlockMatrix::Sparse(m) => Ok(BlockMatrix::Sparse(
            m.select_columns(&trial.kept_map(), trial.dim()),
        )),
        BlockMatrix::Kron(_) => build_block(test, trial, false, grid, integrand()),
    }
}

/// Raviart–Thomas system in parametric form on the identity map, with the
/// normal velocity imposed strongly and tangential data weakly (Nitsche).
pub fn assemble_rt_parametric<T: Real>(
    spaces: &StokesSpaces<T>,
    geometry: &GeometryMap<T>,
    viscosity: &ViscosityField<T>,
    data: &DirichletData<T>,
    c_pen: Option<T>,
) -> Result<StokesSystem<T>> {
    if spaces.disc != Discretization::RaviartThomas {
        return Err(Error::Parameter(
            "Raviart–Thomas assembly needs Raviart–Thomas spaces".into(),
        ));
    }
    if !geometry.is_identity() {
        return Err(Error::Unsupported(
            "Raviart–Thomas assembly supports the identity map only".into(),
        ));
    }
    let nu = viscosity.as_constant().ok_or_else(|| {
        Error::Unsupported("Raviart–Thomas assembly needs constant viscosity".into())
    })?;
    for k in 0..3 {
        for side in 0..2 {
            if data.faces[k][side][k] != T::zero() {
                return Err(Error::Unsupported(
                    "nonzero normal velocity on a face".into(),
                ));
            }
        }
    }
    let c_pen = c_pen.unwrap_or_else(|| spaces.default_penalty());
    let grid = &spaces.grid;
    let h = T::one() / T::from_usize_lossy(spaces.n_el);
    let vel = &spaces.velocity;
    let o = {
        let n = spaces.n_v();
        [0, n[0], n[0] + n[1], n[0] + n[1] + n[2]]
    };

    let mut a_upper = Vec::with_capacity(6);
    for r in 0..3 {
        for s in r..3 {
            if r == s {
                a_upper.push(BlockMatrix::Kron(rt_diagonal_block(
                    spaces, r, c_pen, h, nu,
                )?));
            } else {
                let integrand = Integrand::Constant(vec![(s + 1, r + 1, nu)]);
                a_upper.push(build_block(&vel[r], &vel[s], false, grid, integrand)?);
            }
        }
    }
    let mut b = Vec::with_capacity(3);
    for r in 0..3 {
        b.push(build_block(
            &spaces.pressure,
            &vel[r],
            false,
            grid,
            divergence_integrand(None, r),
        )?);
    }
    let q = build_block(
        &spaces.pressure,
        &spaces.pressure,
        false,
        grid,
        Integrand::Constant(vec![(0, 0, T::one() / nu)]),
    )?;

    let mut rhs_u = vec![T::zero(); spaces.n_u()];
    for k in 0..3 {
        let comp = &vel[k];
        for d in (0..3).filter(|&d| d != k) {
            for side in 0..2 {
                let g = data.faces[d][side][k];
                if g == T::zero() {
                    continue;
                }
                let f = nitsche_load(comp, d, side, c_pen / h, grid)?;
                for (y, v) in rhs_u[o[k]..o[k + 1]].iter_mut().zip(&f) {
                    *y += nu * g * *v;
                }
            }
        }
    }
    let pressure_weights = pressure_integrals(&spaces.pressure, grid, None)?;
    let lifting = [0, 1, 2].map(|k| vec![T::zero(); vel[k].full_dim()]);
    Ok(StokesSystem {
        spaces: spaces.clone(),
        a_upper,
        b: b.try_into()
            .map_err(|_| Error::Shape("divergence blocks".into()))?,
        q,
        rhs_u,
        rhs_p: vec![T::zero(); spaces.n_q()],
        c_pen: Some(c_pen),
        lifting,
        pressure_weights,
    })
}

/// `ν (2 K_k ⊗ M ⊗ M + Σ_{d≠k} K̃_d ⊗ M ⊗ M)` for velocity component `k`.
fn rt_diagonal_block<T: Real>(
    spaces: &StokesSpaces<T>,
    k: usize,
    c_pen: T,
    h: T,
    nu: T,
) -> Result<KronBlock<T>> {
    let comp = &spaces.velocity[k];
    let grid = &spaces.grid;
    let mut stiff = Vec::with_capacity(3);
    let mut mass = Vec::with_capacity(3);
    for d in 0..3 {
        let f = if d == k {
            univariate_km(&comp.spaces[d], None, None, grid, true)?
        } else {
            univariate_km_nitsche(&comp.spaces[d], c_pen, h, None, None, grid)?
        };
        stiff.push(f.k);
        mass.push(f.m);
    }
    let dims = comp.dims();
    let mut blk = KronBlock::new(dims, dims);
    for d in 0..3 {
        let factors = [0, 1, 2].map(|e| {
            if e == d {
                stiff[e].clone()
            } else {
                mass[e].clone()
            }
        });
        let c = if d == k { T::two() * nu } else { nu };
        blk.push(c, factors)?;
    }
    Ok(blk)
}

/// Face load `∫_Γ (2γ ψ − ∂_n ψ)` on face `η_{d+1} = side` for the kept
/// functions of `comp`.
fn nitsche_load<T: Real>(
    comp: &ComponentSpace<T>,
    d: usize,
    side: usize,
    gamma: T,
    grid: &QuadGrid<T>,
) -> Result<Vec<T>> {
    let mut factors: Vec<Vec<T>> = Vec::with_capacity(3);
    for e in 0..3 {
        let sp = &comp.spaces[e];
        let kept = comp.kept(e);
        if e == d {
            let eta = if side == 0 { T::zero() } else { T::one() };
            let normal = if side == 0 { -T::one() } else { T::one() };
            let (first, ders) = sp.eval_basis(eta, 1)?;
            let mut v = vec![T::zero(); sp.dim()];
            for j in 0..ders[0].len() {
                v[first + j] = T::two() * gamma * ders[0][j] - normal * ders[1][j];
            }
            factors.push(kept.iter().map(|&i| v[i]).collect());
        } else {
            let tab = sp.tabulate(grid, 0)?;
            let mut v = vec![T::zero(); sp.dim()];
            for pt in 0..grid.len() {
                let f = tab.first(pt);
                for (j, b) in tab.values(0, pt).iter().enumerate() {
                    v[f + j] += *b * grid.weights()[pt];
                }
            }
            factors.push(kept.iter().map(|&i| v[i]).collect());
        }
    }
    let mut out = Vec::with_capacity(factors.iter().map(Vec::len).product());
    for a3 in &factors[2] {
        for a2 in &factors[1] {
            for a1 in &factors[0] {
                out.push(*a3 * *a2 * *a1);
            }
        }
    }
    Ok(out)
}
