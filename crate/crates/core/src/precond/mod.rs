//! Kronecker-structured velocity and pressure preconditioners, their scaled
//! and geometry-aware variants, block saddle-point wrappers and the IC(0)
//! baseline.

pub mod block;
pub mod ic0;
pub mod separable;

pub use block::{BlockKind, BlockPreconditioner, DenseCoupling, SaddleCoupling};
pub use ic0::{Ic0Options, Ic0Preconditioner, IncompleteCholesky};
pub use separable::{
    sample_coefficients, separable_fit, FitOptions, SeparableFit, SeparableWeights,
};

use crate::assembly::{
    univariate_km, univariate_km_nitsche, Discretization, GeometryMap, GridSamples, StokesSpaces,
    StokesSystem, ViscosityField,
};
use crate::error::{Error, Result};
use crate::fd::FDSolver;
use crate::kron::{kron3_apply, KronOperator};
use crate::krylov::LinearOperator;
use crate::linalg::{BandCholesky, DenseMatrix};
use crate::scalar::Real;

/// Block-diagonal velocity preconditioner, one fast-diagonalization solver
/// per component, optionally wrapped in the symmetric diagonal scaling
/// `D^{-1/2} P̂^{-1} D^{-1/2}`.
#[derive(Debug)]
pub struct VelocityPreconditioner<T> {
    solvers: [FDSolver<T>; 3],
    offsets: [usize; 4],
    scaling: Option<Vec<T>>,
    inv_sqrt: Option<Vec<T>>,
}

impl<T: Real> VelocityPreconditioner<T> {
    pub fn new(solvers: [FDSolver<T>; 3]) -> Self {
        let n = [solvers[0].dim(), solvers[1].dim(), solvers[2].dim()];
        Self {
            solvers,
            offsets: [0, n[0], n[0] + n[1], n[0] + n[1] + n[2]],
            scaling: None,
            inv_sqrt: None,
        }
    }

    pub fn solver(&self, k: usize) -> &FDSolver<T> {
        &self.solvers[k]
    }

    pub fn offsets(&self) -> [usize; 4] {
        self.offsets
    }

    pub fn scaling(&self) -> Option<&[T]> {
        self.scaling.as_deref()
    }

    /// Diagonal of the unscaled Kronecker operator.
    pub fn kron_diagonal(&self) -> Vec<T> {
        self.solvers
            .iter()
            .flat_map(|s| s.operator().diagonal())
            .collect()
    }

    /// Diagonal of the represented operator (scaling included).
    pub fn diagonal(&self) -> Vec<T> {
        let d = self.kron_diagonal();
        match &self.scaling {
            Some(s) => d.iter().zip(s).map(|(a, b)| *a * *b).collect(),
            None => d,
        }
    }

    /// Attaches `D_ii = target_ii / P̂_ii`.
    pub fn with_diagonal_scaling(mut self, target: &[T]) -> Result<Self> {
        let base = self.kron_diagonal();
        if target.len() != base.len() {
            return Err(Error::Shape(format!(
                "diagonal of length {} for a velocity space of size {}",
                target.len(),
                base.len()
            )));
        }
        let mut d = Vec::with_capacity(base.len());
        for (i, (t, b)) in target.iter().zip(&base).enumerate() {
            let v = *t / *b;
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "nonpositive scaling {} at index {i}",
                    v.as_f64()
                )));
            }
            d.push(v);
        }
        self.inv_sqrt = Some(d.iter().map(|v| T::one() / v.sqrt()).collect());
        self.scaling = Some(d);
        Ok(self)
    }

    /// Forward product `y = P_V x`.
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        self.check(x.len())?;
        let mut y = Vec::with_capacity(x.len());
        match &self.scaling {
            Some(d) => {
                let sx: Vec<T> = x.iter().zip(d).map(|(a, b)| *a * b.sqrt()).collect();
                for k in 0..3 {
                    let o = &self.offsets;
                    y.extend(self.solvers[k].operator().matvec(&sx[o[k]..o[k + 1]])?);
                }
                for (v, s) in y.iter_mut().zip(d) {
                    *v *= s.sqrt();
                }
            }
            None => {
                for k in 0..3 {
                    let o = &self.offsets;
                    y.extend(self.solvers[k].operator().matvec(&x[o[k]..o[k + 1]])?);
                }
            }
        }
        Ok(y)
    }

    fn check(&self, n: usize) -> Result<()> {
        if n != self.offsets[3] {
            return Err(Error::Shape(format!(
                "velocity vector of length {n}, expected {}",
                self.offsets[3]
            )));
        }
        Ok(())
    }
}

impl<T: Real> LinearOperator<T> for VelocityPreconditioner<T> {
    fn dim(&self) -> usize {
        self.offsets[3]
    }

    /// `y = P_V^{-1} x`
    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        self.check(x.len())?;
        let o = self.offsets;
        match &self.inv_sqrt {
            Some(s) => {
                let sx: Vec<T> = x.iter().zip(s).map(|(a, b)| *a * *b).collect();
                for k in 0..3 {
                    self.solvers[k].apply_into(&sx[o[k]..o[k + 1]], &mut y[o[k]..o[k + 1]])?;
                }
                for (v, s) in y.iter_mut().zip(s) {
                    *v *= *s;
                }
            }
            None => {
                for k in 0..3 {
                    self.solvers[k].apply_into(&x[o[k]..o[k + 1]], &mut y[o[k]..o[k + 1]])?;
                }
            }
        }
        Ok(())
    }
}

/// Plain Kronecker velocity preconditioner for the identity map and unit
/// viscosity: coefficient 2 on the direction-`k` stiffness term of block `k`.
///
/// For Raviart–Thomas the tangential directions use the Nitsche pair with
/// penalty `c_pen` (default `5(α + 1)`).
pub fn build_pv_plain<T: Real>(
    spaces: &StokesSpaces<T>,
    c_pen: Option<T>,
) -> Result<VelocityPreconditioner<T>> {
    let grid = &spaces.grid;
    let c_pen = c_pen.unwrap_or_else(|| spaces.default_penalty());
    let h = T::one() / T::from_usize_lossy(spaces.n_el);
    let mut solvers = Vec::with_capacity(3);
    for k in 0..3 {
        let comp = &spaces.velocity[k];
        let mut pencils = Vec::with_capacity(3);
        for d in 0..3 {
            let f = match spaces.disc {
                Discretization::RaviartThomas if d != k => {
                    univariate_km_nitsche(&comp.spaces[d], c_pen, h, None, None, grid)?
                }
                _ => univariate_km(&comp.spaces[d], None, None, grid, comp.interior[d])?,
            };
            pencils.push((f.k, f.m));
        }
        let coeffs = [0, 1, 2].map(|d| if d == k { T::two() } else { T::one() });
        solvers.push(FDSolver::new(into_array(pencils), coeffs)?);
    }
    Ok(VelocityPreconditioner::new(into_array(solvers)))
}

/// Kronecker velocity preconditioner `P̂_V` built from weighted univariate
/// pencils, all coefficients one. The weights are node values on the
/// quadrature grid of `spaces`.
pub fn build_pv_geo<T: Real>(
    spaces: &StokesSpaces<T>,
    weights: &[SeparableWeights<T>; 3],
    c_pen: Option<T>,
) -> Result<VelocityPreconditioner<T>> {
    let grid = &spaces.grid;
    let c_pen = c_pen.unwrap_or_else(|| spaces.default_penalty());
    let h = T::one() / T::from_usize_lossy(spaces.n_el);
    let mut solvers = Vec::with_capacity(3);
    for k in 0..3 {
        let comp = &spaces.velocity[k];
        let w = &weights[k];
        let mut pencils = Vec::with_capacity(3);
        for d in 0..3 {
            let (tau, mu) = (Some(w.tau[d].as_slice()), Some(w.mu[d].as_slice()));
            let f = match spaces.disc {
                Discretization::RaviartThomas if d != k => {
                    univariate_km_nitsche(&comp.spaces[d], c_pen, h, tau, mu, grid)?
                }
                _ => univariate_km(&comp.spaces[d], tau, mu, grid, comp.interior[d])?,
            };
            pencils.push((f.k, f.m));
        }
        solvers.push(FDSolver::new(into_array(pencils), [T::one(); 3])?);
    }
    Ok(VelocityPreconditioner::new(into_array(solvers)))
}

/// Separable weights for all three components from sampled geometry and
/// viscosity.
pub fn fit_weights<T: Real>(
    spaces: &StokesSpaces<T>,
    geometry: &GeometryMap<T>,
    viscosity: &ViscosityField<T>,
    opts: &FitOptions,
) -> Result<[SeparableFit<T>; 3]> {
    let samples = GridSamples::new(geometry, viscosity, &spaces.grid)?;
    let mut fits = Vec::with_capacity(3);
    for k in 0..3 {
        let c = sample_coefficients(&samples, spaces.disc, k)?;
        fits.push(separable_fit(samples.npts, &c, opts)?);
    }
    Ok(into_array(fits))
}

/// Geometry-aware `P_V^G`: fitted weights, weighted Kronecker pencils and the
/// diagonal scaling towards `diag(A)`.
pub fn build_pv_geometry_aware<T: Real>(
    system: &StokesSystem<T>,
    geometry: &GeometryMap<T>,
    viscosity: &ViscosityField<T>,
) -> Result<VelocityPreconditioner<T>> {
    let fits = fit_weights(&system.spaces, geometry, viscosity, &FitOptions::default())?;
    let weights = fits.map(|f| f.weights);
    build_pv_geo(&system.spaces, &weights, system.c_pen)?
        .with_diagonal_scaling(&system.a_diagonal())
}

/// `P_Q = M3 ⊗ M2 ⊗ M1` on the pressure space, applied through banded
/// Cholesky factors of the univariate mass matrices, optionally scaled to
/// `D^{1/2} P_Q D^{1/2}`.
#[derive(Clone, Debug)]
pub struct PressurePreconditioner<T> {
    dims: [usize; 3],
    mass: [DenseMatrix<T>; 3],
    factors: [BandCholesky<T>; 3],
    scaling: Option<Vec<T>>,
    inv_sqrt: Option<Vec<T>>,
}

impl<T: Real> PressurePreconditioner<T> {
    pub fn from_mass(mass: [DenseMatrix<T>; 3]) -> Result<Self> {
        let mut factors = Vec::with_capacity(3);
        for m in &mass {
            factors.push(BandCholesky::factor(m, m.bandwidth())?);
        }
        Ok(Self {
            dims: [mass[0].nrows(), mass[1].nrows(), mass[2].nrows()],
            mass,
            factors: into_array(factors),
            scaling: None,
            inv_sqrt: None,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn mass(&self, d: usize) -> &DenseMatrix<T> {
        &self.mass[d]
    }

    pub fn factor(&self, d: usize) -> &BandCholesky<T> {
        &self.factors[d]
    }

    pub fn scaling(&self) -> Option<&[T]> {
        self.scaling.as_deref()
    }

    pub fn kron_diagonal(&self) -> Vec<T> {
        KronOperator::single(
            self.mass[2].clone(),
            self.mass[1].clone(),
            self.mass[0].clone(),
        )
        .expect("consistent dims")
        .diagonal()
    }

    pub fn diagonal(&self) -> Vec<T> {
        let d = self.kron_diagonal();
        match &self.scaling {
            Some(s) => d.iter().zip(s).map(|(a, b)| *a * *b).collect(),
            None => d,
        }
    }

    /// Forward product `y = P_Q x`.
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        match &self.scaling {
            Some(d) => {
                let sx: Vec<T> = x.iter().zip(d).map(|(a, b)| *a * b.sqrt()).collect();
                let mut y = kron3_apply(&self.mass[2], &self.mass[1], &self.mass[0], &sx)?;
                for (v, s) in y.iter_mut().zip(d) {
                    *v *= s.sqrt();
                }
                Ok(y)
            }
            None => kron3_apply(&self.mass[2], &self.mass[1], &self.mass[0], x),
        }
    }

    /// `y = (M3⁻¹ ⊗ M2⁻¹ ⊗ M1⁻¹) x` in place, one banded solve per fibre.
    fn kron_solve_in_place(&self, y: &mut [T]) {
        let [n1, n2, n3] = self.dims;
        for i3 in 0..n3 {
            for i2 in 0..n2 {
                self.factors[0].solve_strided(y, n1 * (i2 + n2 * i3), 1);
            }
        }
        for i3 in 0..n3 {
            for i1 in 0..n1 {
                self.factors[1].solve_strided(y, i1 + n1 * n2 * i3, n1);
            }
        }
        for i2 in 0..n2 {
            for i1 in 0..n1 {
                self.factors[2].solve_strided(y, i1 + n1 * i2, n1 * n2);
            }
        }
    }
}

impl<T: Real> LinearOperator<T> for PressurePreconditioner<T> {
    fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// `y = P_Q^{-1} x`
    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        if x.len() != LinearOperator::dim(self) {
            return Err(Error::Shape(format!(
                "pressure vector of length {}, expected {}",
                x.len(),
                LinearOperator::dim(self)
            )));
        }
        match &self.inv_sqrt {
            Some(s) => {
                for ((yi, xi), si) in y.iter_mut().zip(x).zip(s) {
                    *yi = *xi * *si;
                }
                self.kron_solve_in_place(y);
                for (yi, si) in y.iter_mut().zip(s) {
                    *yi *= *si;
                }
            }
            None => {
                y.copy_from_slice(x);
                self.kron_solve_in_place(y);
            }
        }
        Ok(())
    }
}

/// `P_Q` from the univariate pressure mass matrices.
pub fn build_pq<T: Real>(spaces: &StokesSpaces<T>) -> Result<PressurePreconditioner<T>> {
    let mut mass = Vec::with_capacity(3);
    for d in 0..3 {
        mass.push(univariate_km(&spaces.pressure.spaces[d], None, None, &spaces.grid, false)?.m);
    }
    PressurePreconditioner::from_mass(into_array(mass))
}

/// Attaches `D_Q = diag(Q) / diag(P_Q)`.
pub fn scale_pq<T: Real>(
    pq: PressurePreconditioner<T>,
    q_diagonal: &[T],
) -> Result<PressurePreconditioner<T>> {
    let base = pq.kron_diagonal();
    if base.len() != q_diagonal.len() {
        return Err(Error::Shape(format!(
            "diagonal of length {} for a pressure space of size {}",
            q_diagonal.len(),
            base.len()
        )));
    }
    let mut d = Vec::with_capacity(base.len());
    for (i, (q, b)) in q_diagonal.iter().zip(&base).enumerate() {
        if !(*q > T::zero()) {
            return Err(Error::Parameter(format!(
                "nonpositive diagonal {} at index {i}",
                q.as_f64()
            )));
        }
        d.push(*q / *b);
    }
    Ok(PressurePreconditioner {
        inv_sqrt: Some(d.iter().map(|v| T::one() / v.sqrt()).collect()),
        scaling: Some(d),
        ..pq
    })
}

fn into_array<X>(v: Vec<X>) -> [X; 3] {
    v.try_into()
        .unwrap_or_else(|_| unreachable!("three directions"))
}
