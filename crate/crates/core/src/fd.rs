//! Generalized symmetric eigendecomposition of univariate pencils and the fast
//! diagonalization solver for
//! `R = c3 K3⊗M2⊗M1 + c2 M3⊗K2⊗M1 + c1 M3⊗M2⊗K1`.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::kron::{mode_product_slice, KronOperator};
use crate::linalg::{Cholesky, DenseMatrix, SymmetricEigen};
use crate::scalar::Real;

/// Solution of `K U = M U diag(d)` with `U^T M U = I`, `d` ascending.
#[derive(Clone, Debug)]
pub struct GenEig<T> {
    pub u: DenseMatrix<T>,
    pub d: Vec<T>,
}

impl<T: Real> GenEig<T> {
    /// Cholesky reduction `M = L L^T`, symmetric eigensolve of `L^{-1} K L^{-T}`,
    /// back-transformation `U = L^{-T} V`. Each column of `U` has its
    /// largest-magnitude entry positive.
    pub fn new(k: &DenseMatrix<T>, m: &DenseMatrix<T>) -> Result<Self> {
        if !k.is_square() || !m.is_square() || k.nrows() != m.nrows() {
            return Err(Error::Shape(
                "pencil matrices must be square and of equal size".into(),
            ));
        }
        let n = k.nrows();
        let chol =
            Cholesky::factor(m).map_err(|e| Error::Pencil(format!("mass matrix not SPD: {e}")))?;

        // C = L^{-1} K L^{-T}: solve column-wise twice, using symmetry of K.
        let mut w = k.transpose();
        for i in 0..n {
            chol.solve_lower_in_place(w.row_mut(i));
        }
        let mut c = w.transpose();
        for i in 0..n {
            chol.solve_lower_in_place(c.row_mut(i));
        }
        let c = c.symmetrized();
        let eig = SymmetricEigen::new(&c)?;

        let vt = eig.vectors.transpose();
        let mut ut = vt;
        for j in 0..n {
            let col = ut.row_mut(j);
            chol.solve_upper_in_place(col);
            let mut imax = 0;
            for i in 1..n {
                if col[i].abs() > col[imax].abs() {
                    imax = i;
                }
            }
            if col[imax] < T::zero() {
                for v in col.iter_mut() {
                    *v = -*v;
                }
            }
        }
        Ok(Self {
            u: ut.transpose(),
            d: eig.values,
        })
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }
}

/// Fast diagonalization solver for a three-term Kronecker sum.
#[derive(Debug)]
pub struct FDSolver<T> {
    dims: [usize; 3],
    coeffs: [T; 3],
    eig: [GenEig<T>; 3],
    ut: [DenseMatrix<T>; 3],
    pencils: [(DenseMatrix<T>, DenseMatrix<T>); 3],
    lambda: Vec<T>,
    mode_products: AtomicUsize,
}

impl<T: Real> Clone for FDSolver<T> {
    fn clone(&self) -> Self {
        Self {
            dims: self.dims,
            coeffs: self.coeffs,
            eig: self.eig.clone(),
            ut: self.ut.clone(),
            pencils: self.pencils.clone(),
            lambda: self.lambda.clone(),
            mode_products: AtomicUsize::new(self.mode_products.load(Ordering::Relaxed)),
        }
    }
}

impl<T: Real> FDSolver<T> {
    /// `pencils[d] = (K_d, M_d)` for direction `d + 1`, `coeffs[d]` multiplies
    /// the term carrying `K_d`.
    pub fn new(pencils: [(DenseMatrix<T>, DenseMatrix<T>); 3], coeffs: [T; 3]) -> Result<Self> {
        if coeffs.iter().any(|c| !(*c > T::zero())) {
            return Err(Error::Parameter("coefficients must be positive".into()));
        }
        let eig = [
            GenEig::new(&pencils[0].0, &pencils[0].1)?,
            GenEig::new(&pencils[1].0, &pencils[1].1)?,
            GenEig::new(&pencils[2].0, &pencils[2].1)?,
        ];
        let dims = [eig[0].dim(), eig[1].dim(), eig[2].dim()];
        let mut lambda = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for i3 in 0..dims[2] {
            for i2 in 0..dims[1] {
                let base = coeffs[1] * eig[1].d[i2] + coeffs[2] * eig[2].d[i3];
                for i1 in 0..dims[0] {
                    lambda.push(coeffs[0] * eig[0].d[i1] + base);
                }
            }
        }
        let max = lambda.iter().fold(T::zero(), |m, v| m.max(*v));
        let floor = max * T::lit(1e-12);
        if let Some(bad) = lambda.iter().find(|l| !(**l > floor)) {
            return Err(Error::SingularOperator(format!(
                "Kronecker-sum eigenvalue {} not above {}",
                bad.as_f64(),
                floor.as_f64()
            )));
        }
        let ut = [
            eig[0].u.transpose(),
            eig[1].u.transpose(),
            eig[2].u.transpose(),
        ];
        Ok(Self {
            dims,
            coeffs,
            eig,
            ut,
            pencils,
            lambda,
            mode_products: AtomicUsize::new(0),
        })
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn coeffs(&self) -> [T; 3] {
        self.coeffs
    }

    pub fn eigen(&self, direction: usize) -> &GenEig<T> {
        &self.eig[direction]
    }

    /// Diagonal of the transformed operator, direction 1 fastest.
    pub fn lambda(&self) -> &[T] {
        &self.lambda
    }

    pub fn pencil(&self, direction: usize) -> (&DenseMatrix<T>, &DenseMatrix<T>) {
        (&self.pencils[direction].0, &self.pencils[direction].1)
    }

    /// Number of dense mode products performed by `apply` so far.
    pub fn mode_products(&self) -> usize {
        self.mode_products.load(Ordering::Relaxed)
    }

    /// The operator `R` as a Kronecker sum.
    pub fn operator(&self) -> KronOperator<T> {
        let [(k1, m1), (k2, m2), (k3, m3)] = &self.pencils;
        let mut op = KronOperator::new(self.dims);
        op.push(self.coeffs[0], m3.clone(), m2.clone(), k1.clone())
            .expect("consistent dims");
        op.push(self.coeffs[1], m3.clone(), k2.clone(), m1.clone())
            .expect("consistent dims");
        op.push(self.coeffs[2], k3.clone(), m2.clone(), m1.clone())
            .expect("consistent dims");
        op
    }

    fn transform(&self, mats: [&DenseMatrix<T>; 3], x: &[T], out: &mut [T]) {
        let n = x.len();
        let mut a = vec![T::zero(); n];
        let mut b = vec![T::zero(); n];
        mode_product_slice(self.dims, x, mats[0], 1, &mut a);
        mode_product_slice(self.dims, &a, mats[1], 2, &mut b);
        out.fill(T::zero());
        mode_product_slice(self.dims, &b, mats[2], 3, out);
        self.mode_products.fetch_add(3, Ordering::Relaxed);
    }

    /// `q = R^{-1} t`: projection onto the eigenbases, diagonal scaling, and
    /// back-projection (six mode products).
    pub fn apply(&self, t: &[T]) -> Result<Vec<T>> {
        let mut q = vec![T::zero(); self.dim()];
        self.apply_into(t, &mut q)?;
        Ok(q)
    }

    pub fn apply_into(&self, t: &[T], q: &mut [T]) -> Result<()> {
        if t.len() != self.dim() || q.len() != self.dim() {
            return Err(Error::Shape(format!(
                "fast diagonalization on vector of length {}, expected {}",
                t.len(),
                self.dim()
            )));
        }
        let mut tt = vec![T::zero(); t.len()];
        self.transform([&self.ut[0], &self.ut[1], &self.ut[2]], t, &mut tt);
        for (v, l) in tt.iter_mut().zip(&self.lambda) {
            *v /= *l;
        }
        self.transform([&self.eig[0].u, &self.eig[1].u, &self.eig[2].u], &tt, q);
        Ok(())
    }

    /// `W x` with `W = (U3⊗U2⊗U1) Λ^{-1/2}`, so that `W^T R W = I`.
    pub fn apply_whitening(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::Shape("whitening input length".into()));
        }
        let scaled: Vec<T> = x
            .iter()
            .zip(&self.lambda)
            .map(|(v, l)| *v / l.sqrt())
            .collect();
        let mut out = vec![T::zero(); x.len()];
        self.transform(
            [&self.eig[0].u, &self.eig[1].u, &self.eig[2].u],
            &scaled,
            &mut out,
        );
        Ok(out)
    }

    /// `W^T x`.
    pub fn apply_whitening_transpose(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::Shape("whitening input length".into()));
        }
        let mut out = vec![T::zero(); x.len()];
        self.transform([&self.ut[0], &self.ut[1], &self.ut[2]], x, &mut out);
        for (v, l) in out.iter_mut().zip(&self.lambda) {
            *v /= l.sqrt();
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense_solve;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_spd(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix<f64> {
        let b = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut a = b.matmul(&b.transpose()).unwrap();
        for i in 0..n {
            a[(i, i)] += 0.3;
        }
        a
    }

    fn check_pencil(k: &DenseMatrix<f64>, m: &DenseMatrix<f64>, g: &GenEig<f64>) {
        let n = k.nrows();
        let ku = k.matmul(&g.u).unwrap();
        let mud = m
            .matmul(&g.u)
            .unwrap()
            .matmul(&DenseMatrix::from_diagonal(&g.d))
            .unwrap();
        let knorm = k.max_abs().max(1.0);
        for i in 0..n {
            for j in 0..n {
                assert!((ku[(i, j)] - mud[(i, j)]).abs() <= 1e-10 * knorm);
            }
        }
        let utmu = g.u.transpose().matmul(&m.matmul(&g.u).unwrap()).unwrap();
        for i in 0..n {
            for j in 0..n {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((utmu[(i, j)] - e).abs() <= 1e-10);
            }
        }
        assert!(g.d.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn gen_eig_examples() {
        let g = GenEig::new(
            &DenseMatrix::from_diagonal(&[1.0, 3.0]),
            &DenseMatrix::identity(2),
        )
        .unwrap();
        assert_eq!(g.d, vec![1.0, 3.0]);
        assert_eq!(g.u, DenseMatrix::identity(2));

        let k = DenseMatrix::from_rows(&[&[2.0f64, -1.0], &[-1.0, 2.0]]);
        let g = GenEig::new(&k, &DenseMatrix::identity(2)).unwrap();
        assert_abs_diff_eq!(g.d[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.d[1], 3.0, epsilon = 1e-14);
        let s = 0.5f64.sqrt();
        assert_abs_diff_eq!(g.u[(0, 0)].abs(), s, epsilon = 1e-14);
        assert_abs_diff_eq!(g.u[(1, 0)], g.u[(0, 0)], epsilon = 1e-14);
        assert_abs_diff_eq!(g.u[(1, 1)], -g.u[(0, 1)], epsilon = 1e-14);

        let g = GenEig::new(
            &DenseMatrix::from_diagonal(&[4.0, 3.0]),
            &DenseMatrix::from_diagonal(&[4.0, 1.0]),
        )
        .unwrap();
        assert_abs_diff_eq!(g.d[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.d[1], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.u[(0, 0)], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(g.u[(1, 1)], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.u[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn gen_eig_rejects_indefinite_mass() {
        let m = DenseMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(matches!(
            GenEig::new(&DenseMatrix::identity(2), &m),
            Err(Error::Pencil(_))
        ));
    }

    #[test]
    fn gen_eig_random_pencils() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..8 {
            let k = rand_spd(&mut rng, n);
            let m = rand_spd(&mut rng, n);
            let g = GenEig::new(&k, &m).unwrap();
            check_pencil(&k, &m, &g);
        }
    }

    #[test]
    fn lambda_enumeration() {
        let unit = || (DenseMatrix::identity(1), DenseMatrix::identity(1));
        let s = FDSolver::new([unit(), unit(), unit()], [1.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.lambda(), &[3.0]);
        let s = FDSolver::new([unit(), unit(), unit()], [2.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.lambda(), &[4.0]);
        let p = || {
            (
                DenseMatrix::from_diagonal(&[1.0, 2.0]),
                DenseMatrix::identity(2),
            )
        };
        let s = FDSolver::new([p(), p(), p()], [1.0, 1.0, 1.0]).unwrap();
        let mut l = s.lambda().to_vec();
        l.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(l, vec![3.0, 4.0, 4.0, 4.0, 5.0, 5.0, 5.0, 6.0]);
    }

    #[test]
    fn apply_identity_and_diagonal() {
        let id = || (DenseMatrix::identity(2), DenseMatrix::identity(2));
        let s = FDSolver::new([id(), id(), id()], [1.0, 1.0, 1.0]).unwrap();
        let t: Vec<f64> = (0..8).map(|i| i as f64 + 1.0).collect();
        let q = s.apply(&t).unwrap();
        for (a, b) in q.iter().zip(&t) {
            assert_abs_diff_eq!(*a, b / 3.0, epsilon = 1e-15);
        }
        assert_eq!(s.mode_products(), 6);

        let k = [
            DenseMatrix::from_diagonal(&[1.0, 2.0]),
            DenseMatrix::from_diagonal(&[3.0, 5.0]),
            DenseMatrix::from_diagonal(&[0.5, 7.0]),
        ];
        let m = [
            DenseMatrix::from_diagonal(&[1.0, 2.0]),
            DenseMatrix::from_diagonal(&[1.0, 1.0]),
            DenseMatrix::from_diagonal(&[2.0, 1.0]),
        ];
        let s = FDSolver::new(
            [
                (k[0].clone(), m[0].clone()),
                (k[1].clone(), m[1].clone()),
                (k[2].clone(), m[2].clone()),
            ],
            [1.0, 2.0, 1.0],
        )
        .unwrap();
        let q = s.apply(&t).unwrap();
        let diag = s.operator().diagonal();
        for i in 0..8 {
            assert_abs_diff_eq!(q[i], t[i] / diag[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn apply_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let pencils = [
            (rand_spd(&mut rng, 3), rand_spd(&mut rng, 3)),
            (rand_spd(&mut rng, 3), rand_spd(&mut rng, 3)),
            (rand_spd(&mut rng, 3), rand_spd(&mut rng, 3)),
        ];
        let s = FDSolver::new(pencils, [2.0, 1.0, 1.0]).unwrap();
        let dense = s.operator().to_dense().unwrap();
        let t: Vec<f64> = (0..27).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = s.apply(&t).unwrap();
        let oracle = dense_solve(&dense, &t).unwrap();
        let err: f64 = q
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let nrm: f64 = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err / nrm <= 1e-11);
    }

    #[test]
    fn whitening_diagonalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pencils = [
            (rand_spd(&mut rng, 2), rand_spd(&mut rng, 2)),
            (rand_spd(&mut rng, 3), rand_spd(&mut rng, 3)),
            (rand_spd(&mut rng, 2), rand_spd(&mut rng, 2)),
        ];
        let s = FDSolver::new(pencils, [1.0, 1.0, 2.0]).unwrap();
        let r = s.operator();
        let n = s.dim();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let w = s.apply_whitening(&e).unwrap();
            let rw = r.matvec(&w).unwrap();
            let col = s.apply_whitening_transpose(&rw).unwrap();
            for i in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(col[i], expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn singular_sum_rejected() {
        let zero = || (DenseMatrix::from_diagonal(&[0.0]), DenseMatrix::identity(1));
        assert!(matches!(
            FDSolver::new([zero(), zero(), zero()], [1.0, 1.0, 1.0]),
            Err(Error::SingularOperator(_))
        ));
        let neg = || {
            (
                DenseMatrix::from_diagonal(&[-1.0]),
                DenseMatrix::identity(1),
            )
        };
        assert!(FDSolver::new([neg(), neg(), neg()], [1.0, 1.0, 1.0]).is_err());
        let unit = || (DenseMatrix::identity(1), DenseMatrix::identity(1));
        assert!(FDSolver::new([unit(), unit(), unit()], [0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn single_precision_solver() {
        let k = DenseMatrix::from_rows(&[&[2.0f32, -1.0], &[-1.0, 2.0]]);
        let m = DenseMatrix::from_rows(&[&[2.0f32, 0.5], &[0.5, 2.0]]);
        let s = FDSolver::new(
            [(k.clone(), m.clone()), (k.clone(), m.clone()), (k, m)],
            [1.0, 1.0, 1.0],
        )
        .unwrap();
        let t = vec![1.0f32; 8];
        let q = s.apply(&t).unwrap();
        let r = s.operator().matvec(&q).unwrap();
        for v in r {
            assert!((v - 1.0).abs() < 1e-4);
        }
    }
}
