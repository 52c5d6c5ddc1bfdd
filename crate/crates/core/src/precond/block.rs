use crate::assembly::StokesSystem;
use crate::error::{Error, Result};
use crate::krylov::LinearOperator;
use crate::linalg::DenseMatrix;
use crate::scalar::Real;

/// Divergence coupling `B` of a saddle-point system.
pub trait SaddleCoupling<T> {
    fn n_u(&self) -> usize;
    fn n_p(&self) -> usize;
    /// `y = B x`
    fn apply_b(&self, x: &[T], y: &mut [T]);
    /// `y += alpha Bᵀ x`
    fn apply_bt_add(&self, alpha: T, x: &[T], y: &mut [T]);
}

impl<T: Real> SaddleCoupling<T> for StokesSystem<T> {
    fn n_u(&self) -> usize {
        StokesSystem::n_u(self)
    }

    fn n_p(&self) -> usize {
        self.n_q()
    }

    fn apply_b(&self, x: &[T], y: &mut [T]) {
        StokesSystem::apply_b(self, x, y)
    }

    fn apply_bt_add(&self, alpha: T, x: &[T], y: &mut [T]) {
        StokesSystem::apply_bt_add(self, alpha, x, y)
    }
}

/// Dense `B` of size `n_p × n_u`.
#[derive(Clone, Debug)]
pub struct DenseCoupling<T> {
    pub b: DenseMatrix<T>,
}

impl<T: Real> SaddleCoupling<T> for DenseCoupling<T> {
    fn n_u(&self) -> usize {
        self.b.ncols()
    }

    fn n_p(&self) -> usize {
        self.b.nrows()
    }

    fn apply_b(&self, x: &[T], y: &mut [T]) {
        y.copy_from_slice(&self.b.matvec(x));
    }

    fn apply_bt_add(&self, alpha: T, x: &[T], y: &mut [T]) {
        for (i, xi) in x.iter().enumerate() {
            for (yj, bij) in y.iter_mut().zip(self.b.row(i)) {
                *yj += alpha * *bij * *xi;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// `blockdiag(P_V, P_Q)`
    Diagonal,
    /// `[[P_V, Bᵀ], [0, −P_Q]]`
    Triangular,
    /// `[[P_V, Bᵀ], [B, B P_V⁻¹ Bᵀ − P_Q]]`
    Constrained,
}

/// Block preconditioner assembled from inverse applications of `P_V`, `P_Q`
/// and products with `B`. `apply` computes `s = 𝒫⁻¹ r`.
pub struct BlockPreconditioner<'a, T> {
    pub kind: BlockKind,
    pv: &'a dyn LinearOperator<T>,
    pq: &'a dyn LinearOperator<T>,
    coupling: &'a dyn SaddleCoupling<T>,
}

impl<'a, T: Real> BlockPreconditioner<'a, T> {
    pub fn new(
        kind: BlockKind,
        pv: &'a dyn LinearOperator<T>,
        pq: &'a dyn LinearOperator<T>,
        coupling: &'a dyn SaddleCoupling<T>,
    ) -> Result<Self> {
        if pv.dim() != coupling.n_u() || pq.dim() != coupling.n_p() {
            return Err(Error::Shape(format!(
                "blocks of size {} and {} for a coupling of size {} × {}",
                pv.dim(),
                pq.dim(),
                coupling.n_p(),
                coupling.n_u()
            )));
        }
        Ok(Self {
            kind,
            pv,
            pq,
            coupling,
        })
    }

    /// Symmetric positive definite kinds may be used with MINRES.
    pub fn is_symmetric(&self) -> bool {
        self.kind == BlockKind::Diagonal
    }
}

impl<T: Real> LinearOperator<T> for BlockPreconditioner<'_, T> {
    fn dim(&self) -> usize {
        self.coupling.n_u() + self.coupling.n_p()
    }

    fn apply(&self, r: &[T], s: &mut [T]) -> Result<()> {
        let nu = self.coupling.n_u();
        if r.len() != self.dim() || s.len() != self.dim() {
            return Err(Error::Shape("block preconditioner vector length".into()));
        }
        let (ru, rp) = r.split_at(nu);
        let (su, sp) = s.split_at_mut(nu);
        match self.kind {
            BlockKind::Diagonal => {
                self.pv.apply(ru, su)?;
                self.pq.apply(rp, sp)?;
            }
            BlockKind::Triangular => {
                self.pq.apply(rp, sp)?;
                negate(sp);
                let mut t = ru.to_vec();
                self.coupling.apply_bt_add(-T::one(), sp, &mut t);
                self.pv.apply(&t, su)?;
            }
            BlockKind::Constrained => {
                let mut y = vec![T::zero(); nu];
                self.pv.apply(ru, &mut y)?;
                let mut by = vec![T::zero(); rp.len()];
                self.coupling.apply_b(&y, &mut by);
                let t: Vec<T> = rp.iter().zip(&by).map(|(a, b)| *a - *b).collect();
                self.pq.apply(&t, sp)?;
                negate(sp);
                let mut bts = vec![T::zero(); nu];
                self.coupling.apply_bt_add(T::one(), sp, &mut bts);
                self.pv.apply(&bts, su)?;
                for (a, b) in su.iter_mut().zip(&y) {
                    *a = *b - *a;
                }
            }
        }
        Ok(())
    }
}

fn negate<T: Real>(v: &mut [T]) {
    for x in v.iter_mut() {
        *x = -*x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::Identity;
    use crate::linalg::dense_solve;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix<f64> {
        let g = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut a = g.transpose().matmul(&g).unwrap();
        for i in 0..n {
            a[(i, i)] += n as f64;
        }
        a
    }

    fn dense_inverse(a: &DenseMatrix<f64>) -> DenseMatrix<f64> {
        let n = a.nrows();
        let mut inv = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let c = dense_solve(a, &e).unwrap();
            for i in 0..n {
                inv[(i, j)] = c[i];
            }
        }
        inv
    }

    /// Assembles `[[a, b], [c, d]]`.
    fn blocks(
        a: &DenseMatrix<f64>,
        b: &DenseMatrix<f64>,
        c: &DenseMatrix<f64>,
        d: &DenseMatrix<f64>,
    ) -> DenseMatrix<f64> {
        let (n, m) = (a.nrows(), d.nrows());
        DenseMatrix::from_fn(n + m, n + m, |i, j| match (i < n, j < n) {
            (true, true) => a[(i, j)],
            (true, false) => b[(i, j - n)],
            (false, true) => c[(i - n, j)],
            (false, false) => d[(i - n, j - n)],
        })
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        num / b.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn matches_dense_block_inverses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (nu, np) = (4, 2);
        let pv = spd(nu, &mut rng);
        let pq = spd(np, &mut rng);
        let b = DenseMatrix::from_fn(np, nu, |_, _| rng.gen_range(-1.0..1.0));
        let bt = b.transpose();
        let pv_inv = dense_inverse(&pv);
        let pq_inv = dense_inverse(&pq);
        let coupling = DenseCoupling { b: b.clone() };
        let r: Vec<f64> = (0..nu + np).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let zero_pu = DenseMatrix::zeros(np, nu);
        let schur = b
            .matmul(&pv_inv)
            .unwrap()
            .matmul(&bt)
            .unwrap()
            .add(&pq.scaled(-1.0))
            .unwrap();
        let cases = [
            (
                BlockKind::Diagonal,
                blocks(&pv, &DenseMatrix::zeros(nu, np), &zero_pu, &pq),
            ),
            (
                BlockKind::Triangular,
                blocks(&pv, &bt, &zero_pu, &pq.scaled(-1.0)),
            ),
            (BlockKind::Constrained, blocks(&pv, &bt, &b, &schur)),
        ];
        for (kind, full) in cases {
            let prec = BlockPreconditioner::new(kind, &pv_inv, &pq_inv, &coupling).unwrap();
            let mut s = vec![0.0; nu + np];
            prec.apply(&r, &mut s).unwrap();
            let want = dense_solve(&full, &r).unwrap();
            assert!(
                rel_err(&s, &want) <= 1e-12,
                "{kind:?}: {}",
                rel_err(&s, &want)
            );
        }
    }

    #[test]
    fn identity_blocks_without_coupling() {
        let coupling = DenseCoupling {
            b: DenseMatrix::zeros(2, 3),
        };
        let r = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        for (kind, sign) in [
            (BlockKind::Diagonal, 1.0),
            (BlockKind::Triangular, -1.0),
            (BlockKind::Constrained, -1.0),
        ] {
            let prec =
                BlockPreconditioner::new(kind, &Identity(3), &Identity(2), &coupling).unwrap();
            let mut s = vec![0.0; 5];
            prec.apply(&r, &mut s).unwrap();
            assert_eq!(s, vec![1.0, 2.0, 3.0, sign * 4.0, sign * 5.0]);
        }
    }

    #[test]
    fn constrained_kind_uses_two_velocity_solves() {
        use std::cell::Cell;
        let calls = Cell::new(0usize);
        let pv = crate::krylov::FnOperator::new(3, |x: &[f64], y: &mut [f64]| {
            calls.set(calls.get() + 1);
            y.copy_from_slice(x);
            Ok(())
        });
        let coupling = DenseCoupling {
            b: DenseMatrix::from_rows(&[&[1.0, 0.0, 1.0]]),
        };
        let prec =
            BlockPreconditioner::new(BlockKind::Constrained, &pv, &Identity(1), &coupling).unwrap();
        let mut s = vec![0.0; 4];
        prec.apply(&[1.0, 1.0, 1.0, 1.0], &mut s).unwrap();
        assert_eq!(calls.get(), 2);
        assert!(!prec.is_symmetric());
        assert!(
            BlockPreconditioner::new(BlockKind::Diagonal, &pv, &Identity(2), &coupling).is_err()
        );
    }
}
