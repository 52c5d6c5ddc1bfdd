//! Admissible spectral bounds for the Kronecker preconditioners and extreme
//! eigenvalues of generalized symmetric pencils.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::geometry::{inv3, spectral_norm3};
use crate::assembly::{
    assemble_th, BlockFormat, DirichletData, Discretization, GeometryMap, GridSamples,
    StokesSpaces, StokesSystem, ViscosityField,
};
use crate::error::{Error, Result};
use crate::krylov::{FnOperator, LinearOperator};
use crate::linalg::{symmetric_eigenvalues, Cholesky, DenseMatrix};
use crate::precond::{build_pq, build_pv_plain};
use crate::scalar::{dot, Real};
use crate::splines::QuadGrid;

/// Korn constants for homogeneous Dirichlet conditions.
pub const KORN: f64 = 0.5;

/// Dense eigensolves are refused above this dimension.
pub const DENSE_LIMIT: usize = 4000;

/// Relative slack applied to the bounds, which are extrema over the
/// quadrature grid rather than over the closed domain.
pub const BOUND_SLACK: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralBounds {
    /// Lower bound `δ` for `λ(P_V⁻¹A)`.
    pub delta: f64,
    /// Upper bound `Δ` for `λ(P_V⁻¹A)`: the larger of the two candidates.
    pub delta_upper: f64,
    /// `2 ν_max sup(|det J| ‖J‖²)`
    pub delta_upper_jacobian: f64,
    /// `2 ν_max sup(|det J| ‖J⁻¹‖²)`
    pub delta_upper_inverse: f64,
    /// Lower bound `θ` for `λ(P_Q⁻¹Q)`.
    pub theta: f64,
    /// Upper bound `Θ` for `λ(P_Q⁻¹Q)`.
    pub theta_upper: f64,
    pub nu_min: f64,
    pub nu_max: f64,
}

impl SpectralBounds {
    pub fn velocity_contains(&self, lo: f64, hi: f64) -> bool {
        lo >= self.delta * (1.0 - BOUND_SLACK) && hi <= self.delta_upper * (1.0 + BOUND_SLACK)
    }

    pub fn pressure_contains(&self, lo: f64, hi: f64) -> bool {
        lo >= self.theta * (1.0 - BOUND_SLACK) && hi <= self.theta_upper * (1.0 + BOUND_SLACK)
    }
}

/// Taylor–Hood bounds with the extrema taken over the nodes of `grid`.
pub fn admissible_bounds<T: Real>(
    geometry: &GeometryMap<T>,
    viscosity: &ViscosityField<T>,
    grid: &QuadGrid<T>,
) -> Result<SpectralBounds> {
    let s = GridSamples::new(geometry, viscosity, grid)?;
    let mut nu_min = f64::INFINITY;
    let mut nu_max = 0.0f64;
    let mut korn_inf = f64::INFINITY;
    let mut jac_sup = 0.0f64;
    let mut inv_sup = 0.0f64;
    let mut theta = f64::INFINITY;
    let mut theta_upper = 0.0f64;
    for i in 0..s.len() {
        let det = s.det[i].as_f64();
        let nu = s.nu[i].as_f64();
        let jn = spectral_norm3(&inv3(&s.jinv[i])).as_f64();
        let jin = spectral_norm3(&s.jinv[i]).as_f64();
        nu_min = nu_min.min(nu);
        nu_max = nu_max.max(nu);
        korn_inf = korn_inf.min(det / (jn * jn));
        jac_sup = jac_sup.max(det * jn * jn);
        inv_sup = inv_sup.max(det * jin * jin);
        theta = theta.min(det / nu);
        theta_upper = theta_upper.max(det / nu);
    }
    let delta_upper_jacobian = nu_max * jac_sup / KORN;
    let delta_upper_inverse = nu_max * inv_sup / KORN;
    Ok(SpectralBounds {
        delta: KORN * nu_min * korn_inf,
        delta_upper: delta_upper_jacobian.max(delta_upper_inverse),
        delta_upper_jacobian,
        delta_upper_inverse,
        theta,
        theta_upper,
        nu_min,
        nu_max,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EigMode {
    Dense,
    /// Lanczos with full reorthogonalization in the `P` inner product.
    Lanczos {
        steps: usize,
    },
}

/// Extreme eigenvalues of `P⁻¹A` for symmetric `A` and SPD `P`.
///
/// Dense mode materializes both operators; Lanczos mode applies them.
pub fn extreme_generalized_eigs<T: Real>(
    a: &dyn LinearOperator<T>,
    p: &dyn LinearOperator<T>,
    p_inv: &dyn LinearOperator<T>,
    mode: EigMode,
) -> Result<(f64, f64)> {
    match mode {
        EigMode::Dense => {
            let am = materialize(a)?;
            let pm = materialize(p)?;
            dense_extreme_eigs(&am, &pm)
        }
        EigMode::Lanczos { steps } => lanczos_extreme_eigs(a, p, p_inv, steps, 7),
    }
}

/// Dense matrix of an operator, column by column.
pub fn materialize<T: Real>(op: &dyn LinearOperator<T>) -> Result<DenseMatrix<T>> {
    let n = op.dim();
    if n > DENSE_LIMIT {
        return Err(Error::SizeGuard {
            dim: n,
            limit: DENSE_LIMIT,
        });
    }
    let mut cols = DenseMatrix::zeros(n, n);
    let mut e = vec![T::zero(); n];
    for j in 0..n {
        e[j] = T::one();
        op.apply(&e, cols.row_mut(j))?;
        e[j] = T::zero();
    }
    Ok(cols.transpose())
}

/// Extreme eigenvalues of the pencil `(A, P)` by Cholesky reduction.
pub fn dense_extreme_eigs<T: Real>(a: &DenseMatrix<T>, p: &DenseMatrix<T>) -> Result<(f64, f64)> {
    let n = a.nrows();
    if !a.is_square() || !p.is_square() || p.nrows() != n {
        return Err(Error::Shape(
            "pencil matrices must be square and of equal size".into(),
        ));
    }
    if n > DENSE_LIMIT {
        return Err(Error::SizeGuard {
            dim: n,
            limit: DENSE_LIMIT,
        });
    }
    if n == 0 {
        return Err(Error::Shape("empty pencil".into()));
    }
    let chol = Cholesky::factor(&p.symmetrized())
        .map_err(|e| Error::Pencil(format!("preconditioner not SPD: {e}")))?;
    let mut w = a.symmetrized();
    for i in 0..n {
        chol.solve_lower_in_place(w.row_mut(i));
    }
    let mut c = w.transpose();
    for i in 0..n {
        chol.solve_lower_in_place(c.row_mut(i));
    }
    let ev = symmetric_eigenvalues(&c.symmetrized())?;
    Ok((ev[0].as_f64(), ev[n - 1].as_f64()))
}

/// Lanczos on `P⁻¹A`, self-adjoint in the `P` inner product, with full
/// reorthogonalization. Each basis vector `q_j` is stored with `P q_j`.
pub fn lanczos_extreme_eigs<T: Real>(
    a: &dyn LinearOperator<T>,
    p: &dyn LinearOperator<T>,
    p_inv: &dyn LinearOperator<T>,
    steps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let n = a.dim();
    if p.dim() != n || p_inv.dim() != n || n == 0 {
        return Err(Error::Shape("Lanczos operators of different size".into()));
    }
    let steps = steps.min(n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<T> = (0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
    let mut qs: Vec<Vec<T>> = Vec::new();
    let mut rs: Vec<Vec<T>> = Vec::new();
    let mut alpha = Vec::new();
    let mut beta: Vec<T> = Vec::new();
    let mut w = vec![T::zero(); n];
    let mut pu = vec![T::zero(); n];
    for j in 0..steps {
        for _ in 0..2 {
            for (qi, ri) in qs.iter().zip(&rs) {
                let c = dot(&u, ri);
                for (uk, qk) in u.iter_mut().zip(qi) {
                    *uk -= c * *qk;
                }
            }
        }
        p.apply(&u, &mut pu)?;
        let b2 = dot(&u, &pu);
        if j == 0 {
            if !(b2 > T::zero()) {
                return Err(Error::Pencil("preconditioner not positive definite".into()));
            }
        } else {
            let scale = alpha.iter().fold(T::zero(), |m: T, v: &T| m.max(v.abs()));
            if !(b2 > T::lit(1e-24) * scale * scale) {
                break;
            }
            beta.push(b2.sqrt());
        }
        let b = b2.sqrt();
        qs.push(u.iter().map(|v| *v / b).collect());
        rs.push(pu.iter().map(|v| *v / b).collect());
        a.apply(&qs[j], &mut w)?;
        alpha.push(dot(&qs[j], &w));
        p_inv.apply(&w, &mut u)?;
    }
    let m = alpha.len();
    let t = DenseMatrix::from_fn(m, m, |i, k| {
        if i == k {
            alpha[i]
        } else if i.abs_diff(k) == 1 {
            beta[i.min(k)]
        } else {
            T::zero()
        }
    });
    let ev = symmetric_eigenvalues(&t)?;
    Ok((ev[0].as_f64(), ev[m - 1].as_f64()))
}

/// Extreme eigenvalues of `(A, P_V)` and `(Q, P_Q)` for one configuration.
#[derive(Clone, Debug)]
pub struct BoundsReport {
    pub bounds: SpectralBounds,
    pub velocity: (f64, f64),
    pub pressure: (f64, f64),
    pub n_u: usize,
    pub n_q: usize,
}

impl BoundsReport {
    pub fn velocity_ok(&self) -> bool {
        self.bounds
            .velocity_contains(self.velocity.0, self.velocity.1)
    }

    pub fn pressure_ok(&self) -> bool {
        self.bounds
            .pressure_contains(self.pressure.0, self.pressure.1)
    }

    pub fn velocity_ratio(&self) -> f64 {
        self.velocity.1 / self.velocity.0
    }
}

/// Assembles a homogeneous Taylor–Hood system and computes the extreme
/// eigenvalues of the plain preconditioned blocks.
pub fn verify_bounds<T: Real>(
    geometry: &GeometryMap<T>,
    viscosity: &ViscosityField<T>,
    degree: usize,
    n_el: usize,
    mode: EigMode,
) -> Result<BoundsReport> {
    let spaces = StokesSpaces::new(Discretization::TaylorHood, degree, n_el, None, None)?;
    let system = assemble_th(
        &spaces,
        geometry,
        viscosity,
        &DirichletData::homogeneous(),
        BlockFormat::Auto,
    )?;
    let bounds = admissible_bounds(geometry, viscosity, &spaces.grid)?;
    let pv = build_pv_plain(&spaces, None)?;
    let pq = build_pq(&spaces)?;
    let (a_op, q_op) = block_operators(&system);
    let pv_fwd = FnOperator::new(pv.dim(), |x: &[T], y: &mut [T]| {
        y.copy_from_slice(&pv.matvec(x)?);
        Ok(())
    });
    let pq_fwd = FnOperator::new(pq.dim(), |x: &[T], y: &mut [T]| {
        y.copy_from_slice(&pq.matvec(x)?);
        Ok(())
    });
    let velocity = extreme_generalized_eigs(&a_op, &pv_fwd, &pv, mode)?;
    let pressure = extreme_generalized_eigs(&q_op, &pq_fwd, &pq, mode)?;
    Ok(BoundsReport {
        bounds,
        velocity,
        pressure,
        n_u: system.n_u(),
        n_q: system.n_q(),
    })
}

type BlockOp<'a, T> = FnOperator<Box<dyn Fn(&[T], &mut [T]) -> Result<()> + 'a>>;

/// Velocity block `A` and pressure mass `Q` of an assembled system as operators.
pub fn block_operators<T: Real>(system: &StokesSystem<T>) -> (BlockOp<'_, T>, BlockOp<'_, T>) {
    let a: Box<dyn Fn(&[T], &mut [T]) -> Result<()>> = Box::new(move |x, y| {
        system.apply_a(x, y);
        Ok(())
    });
    let q: Box<dyn Fn(&[T], &mut [T]) -> Result<()>> = Box::new(move |x, y| {
        y.fill(T::zero());
        system.q.matvec_add(T::one(), x, y);
        Ok(())
    });
    (
        FnOperator::new(system.n_u(), a),
        FnOperator::new(system.n_q(), q),
    )
}
