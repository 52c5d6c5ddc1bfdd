//! Preconditioned MINRES, unrestarted right-preconditioned GMRES and
//! preconditioned CG, all started from the zero vector.

use std::time::{Duration, Instant};

use crate::assembly::StokesSystem;
use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, DenseMatrix};
use crate::scalar::{axpy, dot, norm2, Real};

/// Square linear map `y = A x`.
pub trait LinearOperator<T> {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()>;
}

impl<T: Real> LinearOperator<T> for CsrMatrix<T> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        self.matvec_into(x, y);
        Ok(())
    }
}

impl<T: Real> LinearOperator<T> for DenseMatrix<T> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        y.copy_from_slice(&self.matvec(x));
        Ok(())
    }
}

impl<T: Real> LinearOperator<T> for StokesSystem<T> {
    fn dim(&self) -> usize {
        StokesSystem::dim(self)
    }

    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        self.matvec_into(x, y);
        Ok(())
    }
}

/// The identity map.
#[derive(Clone, Copy, Debug)]
pub struct Identity(pub usize);

impl<T: Real> LinearOperator<T> for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        y.copy_from_slice(x);
        Ok(())
    }
}

/// Wraps a closure as an operator.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T: Real, F: Fn(&[T], &mut [T]) -> Result<()>> LinearOperator<T> for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        (self.f)(x, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    /// Relative tolerance on the true residual `‖b − A x‖ / ‖b‖`.
    pub tol: f64,
    pub maxit: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            maxit: 1000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    /// Final true relative residual.
    pub relative_residual: f64,
    /// Relative residual after every iteration (true residual, updated by
    /// recurrence).
    pub residual_history: Vec<f64>,
    /// MINRES only: relative preconditioned residual norm per iteration.
    pub preconditioned_history: Vec<f64>,
    pub solve_time: f64,
    pub prec_time: f64,
    pub prec_applications: usize,
    pub matvecs: usize,
}

impl SolveReport {
    /// Fraction of the solve time spent applying the preconditioner.
    pub fn prec_share(&self) -> f64 {
        if self.solve_time > 0.0 {
            (self.prec_time / self.solve_time).min(1.0)
        } else {
            0.0
        }
    }
}

struct Timed<'a, T> {
    op: &'a dyn LinearOperator<T>,
    elapsed: Duration,
    calls: usize,
}

impl<'a, T: Real> Timed<'a, T> {
    fn new(op: &'a dyn LinearOperator<T>) -> Self {
        Self {
            op,
            elapsed: Duration::ZERO,
            calls: 0,
        }
    }

    fn apply(&mut self, x: &[T], y: &mut [T]) -> Result<()> {
        let t = Instant::now();
        let r = self.op.apply(x, y);
        self.elapsed += t.elapsed();
        self.calls += 1;
        r
    }
}

fn check_dims<T>(
    a: &dyn LinearOperator<T>,
    m: Option<&dyn LinearOperator<T>>,
    b: &[T],
) -> Result<()> {
    if a.dim() != b.len() || m.is_some_and(|m| m.dim() != b.len()) {
        return Err(Error::Shape(format!(
            "operator of size {} with right-hand side of length {}",
            a.dim(),
            b.len()
        )));
    }
    Ok(())
}

fn true_residual<T: Real>(a: &dyn LinearOperator<T>, b: &[T], x: &[T]) -> Result<T> {
    let mut r = vec![T::zero(); b.len()];
    a.apply(x, &mut r)?;
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = *bi - *ri;
    }
    Ok(norm2(&r))
}

/// Preconditioned MINRES for symmetric `a` and SPD `prec`.
///
/// The true residual is carried along through the recurrence for `A x` and is
/// recomputed explicitly before convergence is declared.
pub fn minres<T: Real>(
    a: &dyn LinearOperator<T>,
    b: &[T],
    prec: Option<&dyn LinearOperator<T>>,
    opts: &SolveOptions,
) -> Result<(Vec<T>, SolveReport)> {
    check_dims(a, prec, b)?;
    let start = Instant::now();
    let n = b.len();
    let tol = T::lit(opts.tol);
    let mut report = SolveReport::default();
    let mut x = vec![T::zero(); n];
    let bnorm = norm2(b);
    if bnorm == T::zero() {
        report.converged = true;
        report.solve_time = start.elapsed().as_secs_f64();
        return Ok((x, report));
    }
    let mut m = prec.map(Timed::new);
    let mut apply_m = |src: &[T], dst: &mut [T]| -> Result<()> {
        match m.as_mut() {
            Some(m) => m.apply(src, dst),
            None => {
                dst.copy_from_slice(src);
                Ok(())
            }
        }
    };

    let mut r1 = b.to_vec();
    let mut r2 = b.to_vec();
    let mut y = vec![T::zero(); n];
    apply_m(&r1, &mut y)?;
    let beta1_sq = dot(&r1, &y);
    if !(beta1_sq > T::zero()) {
        return Err(Error::Parameter(
            "preconditioner is not positive definite".into(),
        ));
    }
    let beta1 = beta1_sq.sqrt();
    let (mut oldb, mut beta) = (T::zero(), beta1);
    let (mut dbar, mut epsln, mut phibar) = (T::zero(), T::zero(), beta1);
    let (mut cs, mut sn) = (-T::one(), T::zero());
    let mut w = vec![T::zero(); n];
    let mut w1 = vec![T::zero(); n];
    let mut w2 = vec![T::zero(); n];
    let mut aw = vec![T::zero(); n];
    let mut aw1 = vec![T::zero(); n];
    let mut aw2 = vec![T::zero(); n];
    let mut ax = vec![T::zero(); n];
    let mut v = vec![T::zero(); n];
    let mut av = vec![T::zero(); n];
    let mut resid = vec![T::zero(); n];
    let tiny = T::epsilon();
    let mut tnorm = T::zero();

    for itn in 1..=opts.maxit {
        let s = T::one() / beta;
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = s * *yi;
        }
        a.apply(&v, &mut av)?;
        report.matvecs += 1;
        y.copy_from_slice(&av);
        if itn >= 2 {
            axpy(-beta / oldb, &r1, &mut y);
        }
        let alfa = dot(&v, &y);
        axpy(-alfa / beta, &r2, &mut y);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        apply_m(&r2, &mut y)?;
        oldb = beta;
        let beta_sq = dot(&r2, &y);
        if beta_sq < T::zero() {
            return Err(Error::Parameter(
                "preconditioner is not positive definite".into(),
            ));
        }
        beta = beta_sq.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        tnorm = tnorm.max(alfa.hypot(oldb).hypot(beta));
        let gamma = gbar.hypot(beta);
        if gamma <= tiny * tnorm {
            // Singular projected operator: the system is inconsistent.
            report.iterations = itn;
            break;
        }
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar = sn * phibar;

        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        std::mem::swap(&mut aw1, &mut aw2);
        std::mem::swap(&mut aw2, &mut aw);
        let inv = T::one() / gamma;
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) * inv;
            aw[i] = (av[i] - oldeps * aw1[i] - delta * aw2[i]) * inv;
            x[i] += phi * w[i];
            ax[i] += phi * aw[i];
            resid[i] = b[i] - ax[i];
        }
        let rel = (norm2(&resid) / bnorm).as_f64();
        report.iterations = itn;
        report.residual_history.push(rel);
        report
            .preconditioned_history
            .push((phibar / beta1).as_f64());

        let breakdown = beta <= tiny * beta1;
        if rel <= opts.tol || breakdown {
            let true_rel = true_residual(a, b, &x)? / bnorm;
            report.matvecs += 1;
            if true_rel <= tol {
                report.converged = true;
                report.relative_residual = true_rel.as_f64();
                break;
            }
            if breakdown {
                report.relative_residual = true_rel.as_f64();
                break;
            }
            ax.fill(T::zero());
            a.apply(&x, &mut ax)?;
            report.matvecs += 1;
        }
    }
    if !report.converged {
        report.relative_residual = (true_residual(a, b, &x)? / bnorm).as_f64();
        report.matvecs += 1;
    }
    if let Some(m) = &m {
        report.prec_time = m.elapsed.as_secs_f64();
        report.prec_applications = m.calls;
    }
    report.solve_time = start.elapsed().as_secs_f64();
    Ok((x, report))
}

/// Full (unrestarted) GMRES with right preconditioning, `A M⁻¹ u = b`,
/// `x = M⁻¹ u`. Modified Gram–Schmidt with a second pass when the first one
/// leaves a relative component above `1e−8`.
pub fn gmres<T: Real>(
    a: &dyn LinearOperator<T>,
    b: &[T],
    prec: Option<&dyn LinearOperator<T>>,
    opts: &SolveOptions,
) -> Result<(Vec<T>, SolveReport)> {
    check_dims(a, prec, b)?;
    let start = Instant::now();
    let n = b.len();
    let mut report = SolveReport::default();
    let bnorm = norm2(b);
    if bnorm == T::zero() {
        report.converged = true;
        report.solve_time = start.elapsed().as_secs_f64();
        return Ok((vec![T::zero(); n], report));
    }
    let mut m = prec.map(Timed::new);
    let mut apply_m = |src: &[T], dst: &mut [T]| -> Result<()> {
        match m.as_mut() {
            Some(m) => m.apply(src, dst),
            None => {
                dst.copy_from_slice(src);
                Ok(())
            }
        }
    };

    let mut basis: Vec<Vec<T>> = vec![b.iter().map(|v| *v / bnorm).collect()];
    let mut hcols: Vec<Vec<T>> = Vec::new();
    let mut rot: Vec<(T, T)> = Vec::new();
    let mut g = vec![bnorm];
    let mut z = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let mut x = vec![T::zero(); n];
    let reorth = T::lit(1e-8);

    let solve_x = |hcols: &[Vec<T>],
                   g: &[T],
                   basis: &[Vec<T>],
                   apply_m: &mut dyn FnMut(&[T], &mut [T]) -> Result<()>|
     -> Result<Vec<T>> {
        let k = hcols.len();
        let mut yv = vec![T::zero(); k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= hcols[j][i] * yv[j];
            }
            yv[i] = s / hcols[i][i];
        }
        let mut u = vec![T::zero(); basis[0].len()];
        for (yi, vi) in yv.iter().zip(basis) {
            axpy(*yi, vi, &mut u);
        }
        let mut out = vec![T::zero(); u.len()];
        apply_m(&u, &mut out)?;
        Ok(out)
    };

    for j in 0..opts.maxit {
        apply_m(&basis[j], &mut z)?;
        a.apply(&z, &mut w)?;
        report.matvecs += 1;
        let mut h = vec![T::zero(); j + 2];
        for (i, vi) in basis.iter().enumerate() {
            let c = dot(&w, vi);
            h[i] = c;
            axpy(-c, vi, &mut w);
        }
        let wn = norm2(&w);
        let worst = basis
            .iter()
            .map(|vi| dot(&w, vi).abs())
            .fold(T::zero(), T::max);
        if wn > T::zero() && worst > reorth * wn {
            for (i, vi) in basis.iter().enumerate() {
                let c = dot(&w, vi);
                h[i] += c;
                axpy(-c, vi, &mut w);
            }
        }
        let hn = norm2(&w);
        h[j + 1] = hn;
        for (i, (c, s)) in rot.iter().enumerate() {
            let (a0, a1) = (h[i], h[i + 1]);
            h[i] = *c * a0 + *s * a1;
            h[i + 1] = -*s * a0 + *c * a1;
        }
        let denom = h[j].hypot(h[j + 1]);
        let (c, s) = if denom == T::zero() {
            (T::one(), T::zero())
        } else {
            (h[j] / denom, h[j + 1] / denom)
        };
        h[j] = c * h[j] + s * h[j + 1];
        h[j + 1] = T::zero();
        rot.push((c, s));
        let gj = g[j];
        g[j] = c * gj;
        g.push(-s * gj);
        hcols.push(h);
        let est = (g[j + 1].abs() / bnorm).as_f64();
        report.iterations = j + 1;
        report.residual_history.push(est);

        let breakdown = hn <= T::epsilon() * bnorm;
        if est <= opts.tol || breakdown {
            x = solve_x(&hcols, &g, &basis, &mut apply_m)?;
            let true_rel = (true_residual(a, b, &x)? / bnorm).as_f64();
            report.matvecs += 1;
            report.relative_residual = true_rel;
            if true_rel <= opts.tol {
                report.converged = true;
                break;
            }
            if breakdown {
                break;
            }
        }
        if j + 1 == opts.maxit {
            x = solve_x(&hcols, &g, &basis, &mut apply_m)?;
            report.relative_residual = (true_residual(a, b, &x)? / bnorm).as_f64();
            report.matvecs += 1;
            break;
        }
        basis.push(w.iter().map(|v| *v / hn).collect());
    }
    if let Some(m) = &m {
        report.prec_time = m.elapsed.as_secs_f64();
        report.prec_applications = m.calls;
    }
    report.solve_time = start.elapsed().as_secs_f64();
    Ok((x, report))
}

/// Preconditioned conjugate gradients, stopping on the recurrence residual.
pub fn cg<T: Real>(
    a: &dyn LinearOperator<T>,
    b: &[T],
    prec: Option<&dyn LinearOperator<T>>,
    opts: &SolveOptions,
) -> Result<(Vec<T>, SolveReport)> {
    check_dims(a, prec, b)?;
    let start = Instant::now();
    let n = b.len();
    let mut report = SolveReport::default();
    let mut x = vec![T::zero(); n];
    let bnorm = norm2(b);
    if bnorm == T::zero() {
        report.converged = true;
        return Ok((x, report));
    }
    let mut m = prec.map(Timed::new);
    let mut r = b.to_vec();
    let mut z = vec![T::zero(); n];
    match m.as_mut() {
        Some(m) => m.apply(&r, &mut z)?,
        None => z.copy_from_slice(&r),
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![T::zero(); n];
    let tol = T::lit(opts.tol);
    for it in 1..=opts.maxit {
        a.apply(&p, &mut q)?;
        report.matvecs += 1;
        let pq = dot(&p, &q);
        if !(pq > T::zero()) {
            return Err(Error::Parameter(
                "CG operator is not positive definite".into(),
            ));
        }
        let alpha = rz / pq;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        let rel = norm2(&r) / bnorm;
        report.iterations = it;
        report.residual_history.push(rel.as_f64());
        report.relative_residual = rel.as_f64();
        if rel <= tol {
            report.converged = true;
            break;
        }
        match m.as_mut() {
            Some(m) => m.apply(&r, &mut z)?,
            None => z.copy_from_slice(&r),
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = *zi + beta * *pi;
        }
    }
    if let Some(m) = &m {
        report.prec_time = m.elapsed.as_secs_f64();
        report.prec_applications = m.calls;
    }
    report.solve_time = start.elapsed().as_secs_f64();
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: &[&[f64]]) -> DenseMatrix<f64> {
        DenseMatrix::from_rows(rows)
    }

    #[test]
    fn minres_stops_on_inconsistent_singular_system() {
        let a = dense(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0], &[0.0, 0.0, -2.0]]);
        let (x, rep) = minres(&a, &[1.0, 1.0, 1.0], None, &SolveOptions::default()).unwrap();
        assert!(!rep.converged);
        assert!(rep.iterations <= 3);
        assert!(x.iter().all(|v| v.is_finite() && v.abs() < 10.0));
        assert!(rep.relative_residual.is_finite());
    }

    #[test]
    fn identity_converges_in_one_step() {
        let b = vec![1.0, -2.0, 3.0];
        let opts = SolveOptions::default();
        let id = Identity(3);
        for solve in [minres::<f64>, gmres::<f64>, cg::<f64>] {
            let (x, rep) = solve(&id, &b, Some(&id), &opts).unwrap();
            assert!(rep.converged);
            assert_eq!(rep.iterations, 1);
            assert_eq!(x, b);
        }
    }

    #[test]
    fn finite_termination() {
        let a = dense(&[&[4.0, 1.0, 0.0], &[1.0, 3.0, 1.0], &[0.0, 1.0, 2.0]]);
        let b = vec![1.0, 2.0, 3.0];
        let opts = SolveOptions {
            tol: 1e-12,
            maxit: 10,
        };
        for solve in [minres::<f64>, gmres::<f64>, cg::<f64>] {
            let (_, rep) = solve(&a, &b, None, &opts).unwrap();
            assert!(rep.converged && rep.iterations <= 3, "{rep:?}");
        }
        let ind = dense(&[&[1.0, 0.0], &[0.0, -1.0]]);
        let (x, rep) = minres(&ind, &[2.0, 5.0], None, &opts).unwrap();
        assert!(rep.converged && rep.iterations <= 2);
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] + 5.0).abs() < 1e-12);
        let d = DenseMatrix::from_diagonal(&(1..=10).map(|i| i as f64).collect::<Vec<_>>());
        let (_, rep) = cg(&d, &[1.0; 10], None, &opts).unwrap();
        assert!(rep.converged && rep.iterations <= 10);
    }

    #[test]
    fn gmres_two_eigenvalues_and_exact_preconditioner() {
        // Similar to diag(2, 2, 5, 5) through a nonsymmetric basis change.
        let s = dense(&[
            &[1.0, 1.0, 0.0, 0.0],
            &[0.0, 1.0, 1.0, 0.0],
            &[0.0, 0.0, 1.0, 1.0],
            &[1.0, 0.0, 0.0, 2.0],
        ]);
        let lu = crate::linalg::Lu::factor(&s).unwrap();
        let d = [2.0, 2.0, 5.0, 5.0];
        let mut sinv = DenseMatrix::zeros(4, 4);
        for j in 0..4 {
            let mut e = vec![0.0; 4];
            e[j] = 1.0;
            let c = lu.solve(&e);
            for i in 0..4 {
                sinv[(i, j)] = c[i];
            }
        }
        let a = s
            .matmul(&DenseMatrix::from_diagonal(&d))
            .unwrap()
            .matmul(&sinv)
            .unwrap();
        let b = vec![1.0, -1.0, 2.0, 0.5];
        let opts = SolveOptions {
            tol: 1e-10,
            maxit: 10,
        };
        let (_, rep) = gmres(&a, &b, None, &opts).unwrap();
        assert!(rep.converged && rep.iterations <= 2, "{rep:?}");
        let alu = crate::linalg::Lu::factor(&a).unwrap();
        let exact = FnOperator::new(4, |x: &[f64], y: &mut [f64]| {
            y.copy_from_slice(&alu.solve(x));
            Ok(())
        });
        let (x, rep) = gmres(&a, &b, Some(&exact), &opts).unwrap();
        assert!(rep.converged && rep.iterations == 1);
        let r = a.matvec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let d = DenseMatrix::from_diagonal(&(1..=30).map(|i| i as f64).collect::<Vec<_>>());
        let b = vec![1.0; 30];
        let opts = SolveOptions {
            tol: 1e-12,
            maxit: 3,
        };
        for solve in [minres::<f64>, gmres::<f64>, cg::<f64>] {
            let (_, rep) = solve(&d, &b, None, &opts).unwrap();
            assert!(!rep.converged);
            assert_eq!(rep.iterations, 3);
        }
    }

    #[test]
    fn zero_rhs() {
        let (x, rep) = minres(&Identity(2), &[0.0, 0.0], None, &SolveOptions::default()).unwrap();
        assert!(rep.converged && x == vec![0.0, 0.0]);
    }
}
