use std::sync::atomic::{AtomicUsize, Ordering};

use crate::assembly::StokesSystem;
use crate::error::{Error, Result};
use crate::krylov::{cg, LinearOperator, SolveOptions};
use crate::linalg::CsrMatrix;
use crate::scalar::Real;

/// Zero-fill incomplete Cholesky factor `L` of a symmetric matrix, stored by
/// rows with the diagonal entry last in each row.
#[derive(Clone, Debug)]
pub struct IncompleteCholesky<T> {
    l: CsrMatrix<T>,
    shift: T,
}

impl<T: Real> IncompleteCholesky<T> {
    /// Factors `A + shift I` on the lower-triangular pattern of `A`.
    pub fn factor(a: &CsrMatrix<T>, shift: T) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Shape(
                "incomplete Cholesky of a non-square matrix".into(),
            ));
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices: Vec<u32> = Vec::new();
        let mut values: Vec<T> = Vec::new();
        indptr.push(0);
        let mut w = vec![T::zero(); n];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            let start = values.len();
            let mut diag = None;
            for (c, v) in cols.iter().zip(vals) {
                let j = *c as usize;
                if j > i {
                    break;
                }
                if j == i {
                    diag = Some(*v);
                    break;
                }
                let (lc, lv) = (
                    &indices[indptr[j]..indptr[j + 1]],
                    &values[indptr[j]..indptr[j + 1]],
                );
                let last = lc.len() - 1;
                let mut s = *v;
                for (k, l) in lc[..last].iter().zip(&lv[..last]) {
                    s -= *l * w[*k as usize];
                }
                let lij = s / lv[last];
                w[j] = lij;
                indices.push(j as u32);
                values.push(lij);
            }
            let Some(aii) = diag else {
                return Err(Error::Factorization(format!(
                    "missing diagonal entry in row {i}"
                )));
            };
            let mut s = aii + shift;
            for v in &values[start..] {
                s -= *v * *v;
            }
            if !(s > T::zero()) {
                return Err(Error::Factorization(format!(
                    "incomplete Cholesky breakdown: pivot {} at row {i}",
                    s.as_f64()
                )));
            }
            for c in &indices[start..] {
                w[*c as usize] = T::zero();
            }
            indices.push(i as u32);
            values.push(s.sqrt());
            indptr.push(values.len());
        }
        Ok(Self {
            l: CsrMatrix::from_parts(n, n, indptr, indices, values)?,
            shift,
        })
    }

    /// Tries `shift = 0`, then `base · mean(diag A) · factor` for each factor.
    pub fn factor_with_retry(a: &CsrMatrix<T>, base: T, factors: &[T]) -> Result<Self> {
        let mut last = match Self::factor(a, T::zero()) {
            Ok(f) => return Ok(f),
            Err(e) => e,
        };
        let d = a.diagonal();
        let mean = d.iter().copied().sum::<T>() / T::from_usize_lossy(d.len().max(1));
        for f in factors {
            match Self::factor(a, base * mean * *f) {
                Ok(l) => return Ok(l),
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    /// The lower-triangular factor.
    pub fn lower(&self) -> &CsrMatrix<T> {
        &self.l
    }

    pub fn shift(&self) -> T {
        self.shift
    }

    /// Solves `L Lᵀ x = b` in place.
    pub fn solve_in_place(&self, x: &mut [T]) {
        let n = self.l.nrows();
        for i in 0..n {
            let (c, v) = self.l.row(i);
            let last = c.len() - 1;
            let mut s = x[i];
            for (k, l) in c[..last].iter().zip(&v[..last]) {
                s -= *l * x[*k as usize];
            }
            x[i] = s / v[last];
        }
        for i in (0..n).rev() {
            let (c, v) = self.l.row(i);
            let last = c.len() - 1;
            x[i] /= v[last];
            let xi = x[i];
            for (k, l) in c[..last].iter().zip(&v[..last]) {
                x[*k as usize] -= *l * xi;
            }
        }
    }
}

impl<T: Real> LinearOperator<T> for IncompleteCholesky<T> {
    fn dim(&self) -> usize {
        self.l.nrows()
    }

    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        y.copy_from_slice(x);
        self.solve_in_place(y);
        Ok(())
    }
}

/// Block-diagonal application of several incomplete factors.
#[derive(Clone, Debug)]
pub struct BlockIc<T> {
    blocks: Vec<IncompleteCholesky<T>>,
    offsets: Vec<usize>,
}

impl<T: Real> BlockIc<T> {
    pub fn new(blocks: Vec<IncompleteCholesky<T>>) -> Self {
        let mut offsets = vec![0];
        for b in &blocks {
            offsets.push(offsets.last().copied().unwrap_or(0) + b.dim());
        }
        Self { blocks, offsets }
    }

    pub fn blocks(&self) -> &[IncompleteCholesky<T>] {
        &self.blocks
    }
}

impl<T: Real> LinearOperator<T> for BlockIc<T> {
    fn dim(&self) -> usize {
        *self.offsets.last().expect("nonempty")
    }

    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        y.copy_from_slice(x);
        for (b, w) in self.blocks.iter().zip(self.offsets.windows(2)) {
            b.solve_in_place(&mut y[w[0]..w[1]]);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ic0Options {
    /// Relative tolerance of the inner CG solves.
    pub inner_tol: f64,
    pub inner_maxit: usize,
    /// Diagonal shift on breakdown: `shift_base · mean(diag) · factor`.
    pub shift_base: f64,
    pub shift_factors: Vec<f64>,
}

impl Default for Ic0Options {
    fn default() -> Self {
        Self {
            inner_tol: 1e-2,
            inner_maxit: 200,
            shift_base: 1e-3,
            shift_factors: vec![1.0, 10.0, 100.0],
        }
    }
}

/// Inexact block-diagonal preconditioner: each application runs CG on the
/// coupled velocity block (preconditioned by the incomplete factors of its
/// diagonal blocks) and on the pressure block, to a fixed relative tolerance.
pub struct Ic0Preconditioner<'a, T> {
    velocity: Box<dyn LinearOperator<T> + 'a>,
    pressure: Box<dyn LinearOperator<T> + 'a>,
    velocity_ic: BlockIc<T>,
    pressure_ic: IncompleteCholesky<T>,
    opts: Ic0Options,
    calls: AtomicUsize,
    inner_velocity: AtomicUsize,
    inner_pressure: AtomicUsize,
    unconverged: AtomicUsize,
}

struct VelocityBlock<'a, T>(&'a StokesSystem<T>);

impl<T: Real> LinearOperator<T> for VelocityBlock<'_, T> {
    fn dim(&self) -> usize {
        self.0.n_u()
    }

    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        self.0.apply_a(x, y);
        Ok(())
    }
}

impl<'a, T: Real> Ic0Preconditioner<'a, T> {
    pub fn new(
        velocity: Box<dyn LinearOperator<T> + 'a>,
        velocity_blocks: &[CsrMatrix<T>],
        pressure: Box<dyn LinearOperator<T> + 'a>,
        pressure_matrix: &CsrMatrix<T>,
        opts: Ic0Options,
    ) -> Result<Self> {
        let base = T::lit(opts.shift_base);
        let factors: Vec<T> = opts.shift_factors.iter().map(|f| T::lit(*f)).collect();
        let mut blocks = Vec::with_capacity(velocity_blocks.len());
        for b in velocity_blocks {
            blocks.push(IncompleteCholesky::factor_with_retry(b, base, &factors)?);
        }
        let velocity_ic = BlockIc::new(blocks);
        let pressure_ic = IncompleteCholesky::factor_with_retry(pressure_matrix, base, &factors)?;
        if velocity_ic.dim() != velocity.dim() || pressure_ic.dim() != pressure.dim() {
            return Err(Error::Shape(
                "incomplete factors do not match the operators".into(),
            ));
        }
        Ok(Self {
            velocity,
            pressure,
            velocity_ic,
            pressure_ic,
            opts,
            calls: AtomicUsize::new(0),
            inner_velocity: AtomicUsize::new(0),
            inner_pressure: AtomicUsize::new(0),
            unconverged: AtomicUsize::new(0),
        })
    }

    /// Factors `A_11, A_22, A_33` and `Q` of an assembled system.
    pub fn from_system(system: &'a StokesSystem<T>, opts: Ic0Options) -> Result<Self> {
        let blocks = [
            system.a_csr(0, 0)?,
            system.a_csr(1, 1)?,
            system.a_csr(2, 2)?,
        ];
        let q = system.q.to_csr()?;
        let q_op = crate::krylov::FnOperator::new(system.n_q(), move |x: &[T], y: &mut [T]| {
            y.fill(T::zero());
            system.q.matvec_add(T::one(), x, y);
            Ok(())
        });
        Self::new(
            Box::new(VelocityBlock(system)),
            &blocks,
            Box::new(q_op),
            &q,
            opts,
        )
    }

    pub fn velocity_factors(&self) -> &BlockIc<T> {
        &self.velocity_ic
    }

    pub fn pressure_factor(&self) -> &IncompleteCholesky<T> {
        &self.pressure_ic
    }

    pub fn applications(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Total inner CG iterations on the velocity and pressure blocks.
    pub fn inner_iterations(&self) -> (usize, usize) {
        (
            self.inner_velocity.load(Ordering::Relaxed),
            self.inner_pressure.load(Ordering::Relaxed),
        )
    }

    /// Inner solves that hit the iteration cap.
    pub fn unconverged_inner_solves(&self) -> usize {
        self.unconverged.load(Ordering::Relaxed)
    }
}

impl<T: Real> LinearOperator<T> for Ic0Preconditioner<'_, T> {
    fn dim(&self) -> usize {
        self.velocity.dim() + self.pressure.dim()
    }

    fn apply(&self, r: &[T], s: &mut [T]) -> Result<()> {
        let nu = self.velocity.dim();
        let opts = SolveOptions {
            tol: self.opts.inner_tol,
            maxit: self.opts.inner_maxit,
        };
        let (ru, rp) = r.split_at(nu);
        let (su, sp) = s.split_at_mut(nu);
        let (xu, rep_u) = cg(self.velocity.as_ref(), ru, Some(&self.velocity_ic), &opts)?;
        let (xp, rep_p) = cg(self.pressure.as_ref(), rp, Some(&self.pressure_ic), &opts)?;
        su.copy_from_slice(&xu);
        sp.copy_from_slice(&xp);
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner_velocity
            .fetch_add(rep_u.iterations, Ordering::Relaxed);
        self.inner_pressure
            .fetch_add(rep_p.iterations, Ordering::Relaxed);
        let missed = usize::from(!rep_u.converged) + usize::from(!rep_p.converged);
        self.unconverged.fetch_add(missed, Ordering::Relaxed);
        Ok(())
    }
}
