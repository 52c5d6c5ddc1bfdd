//! Three-factor Kronecker algebra on vectors stored with the first index fastest.
//!
//! A term `c (A3 ⊗ A2 ⊗ A1)` acts on `vec(X)` with `X[i1, i2, i3]` at
//! position `i1 + n1 * (i2 + n2 * i3)`.

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, DenseMatrix, Lu};
use crate::scalar::Real;

/// Dense order-3 tensor, first index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![T::zero(); dims[0] * dims[1] * dims[2]],
        }
    }

    /// Reshapes a vector (the inverse of `vec`).
    pub fn from_vec(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::Shape(format!(
                "{} entries for a {}x{}x{} tensor",
                data.len(),
                dims[0],
                dims[1],
                dims[2]
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for i3 in 0..dims[2] {
            for i2 in 0..dims[1] {
                for i1 in 0..dims[0] {
                    data.push(f(i1, i2, i3));
                }
            }
        }
        Self { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn get(&self, i1: usize, i2: usize, i3: usize) -> T {
        self.data[i1 + self.dims[0] * (i2 + self.dims[1] * i3)]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// `vec(X)`
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

/// `t ×_mode Y`: contracts index `mode` (1, 2 or 3) of `t` with the columns of `Y`.
pub fn mode_product<T: Real>(
    t: &Tensor3<T>,
    y: &DenseMatrix<T>,
    mode: usize,
) -> Result<Tensor3<T>> {
    if !(1..=3).contains(&mode) {
        return Err(Error::Parameter(format!("mode {mode} not in 1..=3")));
    }
    if y.ncols() != t.dims[mode - 1] {
        return Err(Error::Shape(format!(
            "mode-{mode} product: matrix has {} columns, tensor dimension is {}",
            y.ncols(),
            t.dims[mode - 1]
        )));
    }
    let mut dims = t.dims;
    dims[mode - 1] = y.nrows();
    let mut out = vec![T::zero(); dims[0] * dims[1] * dims[2]];
    mode_product_slice(t.dims, &t.data, y, mode, &mut out);
    Ok(Tensor3 { dims, data: out })
}

/// Unchecked mode product on raw slices; `out` must be zero-initialized with
/// the output size.
pub(crate) fn mode_product_slice<T: Real>(
    dims: [usize; 3],
    x: &[T],
    y: &DenseMatrix<T>,
    mode: usize,
    out: &mut [T],
) {
    let [n1, n2, n3] = dims;
    let r = y.nrows();
    match mode {
        1 => {
            for (fiber, ofiber) in x.chunks_exact(n1).zip(out.chunks_exact_mut(r)) {
                for (j, o) in ofiber.iter_mut().enumerate() {
                    *o = crate::scalar::dot(y.row(j), fiber);
                }
            }
        }
        2 => {
            for i3 in 0..n3 {
                let src = &x[i3 * n1 * n2..(i3 + 1) * n1 * n2];
                let dst = &mut out[i3 * n1 * r..(i3 + 1) * n1 * r];
                for j in 0..r {
                    let yrow = y.row(j);
                    let o = &mut dst[j * n1..(j + 1) * n1];
                    for (i2, &c) in yrow.iter().enumerate() {
                        if c != T::zero() {
                            crate::scalar::axpy(c, &src[i2 * n1..(i2 + 1) * n1], o);
                        }
                    }
                }
            }
        }
        _ => {
            let slab = n1 * n2;
            for j in 0..r {
                let o = &mut out[j * slab..(j + 1) * slab];
                for (i3, &c) in y.row(j).iter().enumerate() {
                    if c != T::zero() {
                        crate::scalar::axpy(c, &x[i3 * slab..(i3 + 1) * slab], o);
                    }
                }
            }
        }
    }
}

/// Applies `A3 ⊗ A2 ⊗ A1` (square or rectangular factors) to `x`.
pub fn kron3_apply<T: Real>(
    a3: &DenseMatrix<T>,
    a2: &DenseMatrix<T>,
    a1: &DenseMatrix<T>,
    x: &[T],
) -> Result<Vec<T>> {
    let dims = [a1.ncols(), a2.ncols(), a3.ncols()];
    let t = Tensor3::from_vec(dims, x.to_vec())?;
    let t = mode_product(&t, a1, 1)?;
    let t = mode_product(&t, a2, 2)?;
    Ok(mode_product(&t, a3, 3)?.into_vec())
}

/// One weighted term `c (A3 ⊗ A2 ⊗ A1)`.
#[derive(Clone, Debug)]
pub struct KronTerm<T> {
    pub coeff: T,
    /// Stored in direction order `[A1, A2, A3]`.
    pub factors: [DenseMatrix<T>; 3],
}

/// Sum of weighted Kronecker terms over square factors of common sizes.
#[derive(Clone, Debug)]
pub struct KronOperator<T> {
    dims: [usize; 3],
    terms: Vec<KronTerm<T>>,
}

impl<T: Real> KronOperator<T> {
    pub fn new(dims: [usize; 3]) -> Self {
        Self {
            dims,
            terms: Vec::new(),
        }
    }

    /// Adds `c (a3 ⊗ a2 ⊗ a1)`.
    pub fn push(
        &mut self,
        coeff: T,
        a3: DenseMatrix<T>,
        a2: DenseMatrix<T>,
        a1: DenseMatrix<T>,
    ) -> Result<()> {
        for (d, a) in [&a1, &a2, &a3].into_iter().enumerate() {
            if !a.is_square() || a.nrows() != self.dims[d] {
                return Err(Error::Shape(format!(
                    "factor for direction {} is {}x{}, expected {}",
                    d + 1,
                    a.nrows(),
                    a.ncols(),
                    self.dims[d]
                )));
            }
        }
        self.terms.push(KronTerm {
            coeff,
            factors: [a1, a2, a3],
        });
        Ok(())
    }

    /// Single-term operator `a3 ⊗ a2 ⊗ a1`.
    pub fn single(a3: DenseMatrix<T>, a2: DenseMatrix<T>, a1: DenseMatrix<T>) -> Result<Self> {
        let mut op = Self::new([a1.nrows(), a2.nrows(), a3.nrows()]);
        op.push(T::one(), a3, a2, a1)?;
        Ok(op)
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn terms(&self) -> &[KronTerm<T>] {
        &self.terms
    }

    /// `y = Σ c (A3 ⊗ A2 ⊗ A1) x` through mode products.
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "vector of length {} for operator of size {}",
                x.len(),
                self.dim()
            )));
        }
        let n = self.dim();
        let mut y = vec![T::zero(); n];
        let mut t1 = vec![T::zero(); n];
        let mut t2 = vec![T::zero(); n];
        let mut t3 = vec![T::zero(); n];
        for term in &self.terms {
            t1.fill(T::zero());
            t2.fill(T::zero());
            t3.fill(T::zero());
            mode_product_slice(self.dims, x, &term.factors[0], 1, &mut t1);
            mode_product_slice(self.dims, &t1, &term.factors[1], 2, &mut t2);
            mode_product_slice(self.dims, &t2, &term.factors[2], 3, &mut t3);
            crate::scalar::axpy(term.coeff, &t3, &mut y);
        }
        Ok(y)
    }

    /// Explicit matrix, refused above `10^4` rows.
    pub fn to_dense(&self) -> Result<DenseMatrix<T>> {
        const LIMIT: usize = 10_000;
        let n = self.dim();
        if n > LIMIT {
            return Err(Error::SizeGuard {
                dim: n,
                limit: LIMIT,
            });
        }
        let mut out = DenseMatrix::zeros(n, n);
        for term in &self.terms {
            let [a1, a2, a3] = &term.factors;
            let k = kron_product(a3, &kron_product(a2, a1));
            for (o, v) in out.as_mut_slice().iter_mut().zip(k.as_slice()) {
                *o += term.coeff * *v;
            }
        }
        Ok(out)
    }

    /// Entry `(i, i)` of the operator without forming it.
    pub fn diagonal(&self) -> Vec<T> {
        let [n1, n2, n3] = self.dims;
        let mut d = vec![T::zero(); self.dim()];
        for term in &self.terms {
            let [a1, a2, a3] = &term.factors;
            for i3 in 0..n3 {
                for i2 in 0..n2 {
                    let c = term.coeff * a3[(i3, i3)] * a2[(i2, i2)];
                    let base = n1 * (i2 + n2 * i3);
                    for i1 in 0..n1 {
                        d[base + i1] += c * a1[(i1, i1)];
                    }
                }
            }
        }
        d
    }
}

/// Two-factor dense Kronecker product `A ⊗ B`.
pub fn kron_product<T: Real>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> DenseMatrix<T> {
    let (ra, ca, rb, cb) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    DenseMatrix::from_fn(ra * rb, ca * cb, |i, j| {
        a[(i / rb, j / cb)] * b[(i % rb, j % cb)]
    })
}

/// Factorization of one univariate factor: Cholesky when possible, LU otherwise.
#[derive(Clone, Debug)]
enum FactorSolve<T> {
    Cholesky(Cholesky<T>),
    Lu(Lu<T>),
}

impl<T: Real> FactorSolve<T> {
    fn new(a: &DenseMatrix<T>) -> Result<Self> {
        if a.is_symmetric(T::zero()) {
            if let Ok(c) = Cholesky::factor(a) {
                return Ok(Self::Cholesky(c));
            }
        }
        Ok(Self::Lu(Lu::factor(a)?))
    }

    fn solve(&self, b: &[T]) -> Vec<T> {
        match self {
            Self::Cholesky(c) => c.solve(b),
            Self::Lu(l) => l.solve(b),
        }
    }
}

/// Factorized inverse of a single Kronecker term `A3 ⊗ A2 ⊗ A1`.
#[derive(Clone, Debug)]
pub struct KronInverse<T> {
    dims: [usize; 3],
    solvers: [FactorSolve<T>; 3],
}

impl<T: Real> KronInverse<T> {
    pub fn new(a3: &DenseMatrix<T>, a2: &DenseMatrix<T>, a1: &DenseMatrix<T>) -> Result<Self> {
        for a in [a1, a2, a3] {
            if !a.is_square() {
                return Err(Error::Shape(
                    "Kronecker inverse of non-square factor".into(),
                ));
            }
        }
        Ok(Self {
            dims: [a1.nrows(), a2.nrows(), a3.nrows()],
            solvers: [
                FactorSolve::new(a1)?,
                FactorSolve::new(a2)?,
                FactorSolve::new(a3)?,
            ],
        })
    }

    /// Solves `(A3 ⊗ A2 ⊗ A1) y = x` by one factor solve per fiber and mode.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        let [n1, n2, n3] = self.dims;
        if x.len() != n1 * n2 * n3 {
            return Err(Error::Shape("Kronecker inverse input length".into()));
        }
        let mut y = x.to_vec();
        let mut fiber = Vec::new();
        for fiber1 in y.chunks_exact_mut(n1) {
            let s = self.solvers[0].solve(fiber1);
            fiber1.copy_from_slice(&s);
        }
        for i3 in 0..n3 {
            for i1 in 0..n1 {
                fiber.clear();
                fiber.extend((0..n2).map(|i2| y[i1 + n1 * (i2 + n2 * i3)]));
                let s = self.solvers[1].solve(&fiber);
                for (i2, v) in s.into_iter().enumerate() {
                    y[i1 + n1 * (i2 + n2 * i3)] = v;
                }
            }
        }
        let slab = n1 * n2;
        for k in 0..slab {
            fiber.clear();
            fiber.extend((0..n3).map(|i3| y[k + slab * i3]));
            let s = self.solvers[2].solve(&fiber);
            for (i3, v) in s.into_iter().enumerate() {
                y[k + slab * i3] = v;
            }
        }
        Ok(y)
    }
}

/// Solves `(A3 ⊗ A2 ⊗ A1) y = x` without forming the Kronecker matrix.
pub fn kron_inverse_apply<T: Real>(
    a3: &DenseMatrix<T>,
    a2: &DenseMatrix<T>,
    a1: &DenseMatrix<T>,
    x: &[T],
) -> Result<Vec<T>> {
    KronInverse::new(a3, a2, a1)?.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense_solve;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix<f64> {
        DenseMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn rand_spd(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix<f64> {
        let b = rand_mat(rng, n, n);
        let mut a = b.matmul(&b.transpose()).unwrap();
        for i in 0..n {
            a[(i, i)] += 0.5 + n as f64 * 0.1;
        }
        a
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }

    #[test]
    fn vec_round_trip_and_layout() {
        let t = Tensor3::from_fn([2, 3, 4], |a, b, c| (a + 10 * b + 100 * c) as f64);
        assert_eq!(t.as_slice()[1 + 2 * 1 + 6 * 2], 1.0 + 10.0 + 200.0);
        let v = t.clone().into_vec();
        assert_eq!(Tensor3::from_vec([2, 3, 4], v).unwrap(), t);
        assert!(Tensor3::from_vec([2, 3, 4], vec![0.0; 5]).is_err());
    }

    #[test]
    fn mode_product_examples() {
        let t = Tensor3::from_vec([2, 2, 2], vec![1.0; 8]).unwrap();
        let y = DenseMatrix::from_rows(&[&[1.0, 1.0]]);
        let r = mode_product(&t, &y, 1).unwrap();
        assert_eq!(r.dims(), [1, 2, 2]);
        assert!(r.as_slice().iter().all(|v| *v == 2.0));
        let id = DenseMatrix::identity(2);
        for mode in 1..=3 {
            assert_eq!(mode_product(&t, &id, mode).unwrap(), t);
        }
        assert!(mode_product(&t, &DenseMatrix::identity(3), 2).is_err());
        assert!(mode_product(&t, &id, 4).is_err());
    }

    #[test]
    fn mode_product_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = Tensor3::from_fn([2, 3, 4], |_, _, _| rng.gen_range(-1.0..1.0));
        for mode in 1..=3 {
            let n = t.dims()[mode - 1];
            let y = rand_mat(&mut rng, 5, n);
            let r = mode_product(&t, &y, mode).unwrap();
            let d = r.dims();
            for i3 in 0..d[2] {
                for i2 in 0..d[1] {
                    for i1 in 0..d[0] {
                        let mut s = 0.0;
                        for k in 0..n {
                            let (j, v) = match mode {
                                1 => (i1, t.get(k, i2, i3)),
                                2 => (i2, t.get(i1, k, i3)),
                                _ => (i3, t.get(i1, i2, k)),
                            };
                            s += y[(j, k)] * v;
                        }
                        assert!((r.get(i1, i2, i3) - s).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn matvec_examples() {
        let op = KronOperator::single(
            DenseMatrix::from_rows(&[&[2.0]]),
            DenseMatrix::from_rows(&[&[3.0]]),
            DenseMatrix::from_rows(&[&[4.0]]),
        )
        .unwrap();
        assert_eq!(op.matvec(&[1.0]).unwrap(), vec![24.0]);
        let id = KronOperator::single(
            DenseMatrix::identity(2),
            DenseMatrix::identity(3),
            DenseMatrix::identity(2),
        )
        .unwrap();
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        assert_eq!(id.matvec(&x).unwrap(), x);
        assert!(id.matvec(&x[..5]).is_err());
    }

    #[test]
    fn dense_examples() {
        let op = KronOperator::single(
            DenseMatrix::identity(1),
            DenseMatrix::identity(2),
            DenseMatrix::from_rows(&[&[2.0]]),
        )
        .unwrap();
        assert_eq!(
            op.to_dense().unwrap(),
            DenseMatrix::from_diagonal(&[2.0, 2.0])
        );
        let swap = DenseMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let k = kron_product(&swap, &DenseMatrix::identity(2));
        let expect = DenseMatrix::from_rows(&[
            &[0.0, 0.0, 1.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0, 0.0],
        ]);
        assert_eq!(k, expect);
        let big = KronOperator::single(
            DenseMatrix::identity(30),
            DenseMatrix::identity(30),
            DenseMatrix::<f64>::identity(30),
        )
        .unwrap();
        assert!(matches!(big.to_dense(), Err(Error::SizeGuard { .. })));
    }

    #[test]
    fn diagonal_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut op = KronOperator::new([2, 3, 2]);
        for c in [1.0, 2.5] {
            op.push(
                c,
                rand_mat(&mut rng, 2, 2),
                rand_mat(&mut rng, 3, 3),
                rand_mat(&mut rng, 2, 2),
            )
            .unwrap();
        }
        let d = op.to_dense().unwrap().diagonal();
        for (a, b) in op.diagonal().iter().zip(&d) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn inverse_examples() {
        let x = vec![1.0f64, 2.0, 3.0, 4.0];
        let id = DenseMatrix::identity(2);
        let one = DenseMatrix::identity(1);
        assert_eq!(kron_inverse_apply(&one, &id, &id, &x).unwrap(), x);
        let y = kron_inverse_apply(
            &one,
            &DenseMatrix::from_diagonal(&[1.0, 2.0]),
            &DenseMatrix::from_diagonal(&[3.0, 1.0]),
            &x,
        )
        .unwrap();
        for (a, b) in y.iter().zip([1.0 / 3.0, 2.0, 3.0 / 6.0, 2.0]) {
            assert!((a - b).abs() < 1e-15f64);
        }
        let singular = DenseMatrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert!(kron_inverse_apply(&one, &id, &singular, &x).is_err());
    }

    #[test]
    fn inverse_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let (a3, a2, a1) = (
                rand_spd(&mut rng, 3),
                rand_spd(&mut rng, 3),
                rand_spd(&mut rng, 3),
            );
            let x: Vec<f64> = (0..27).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = kron_inverse_apply(&a3, &a2, &a1, &x).unwrap();
            let dense = KronOperator::single(a3.clone(), a2.clone(), a1.clone())
                .unwrap()
                .to_dense()
                .unwrap();
            let oracle = dense_solve(&dense, &x).unwrap();
            assert!(rel_err(&y, &oracle) <= 1e-12);
            assert!(rel_err(&dense.matvec(&y), &x) <= 1e-12);
        }
        let n1 = rand_mat(&mut rng, 2, 2);
        let y = kron_inverse_apply(
            &DenseMatrix::identity(1),
            &DenseMatrix::identity(1),
            &n1,
            &[1.0, 0.5],
        )
        .unwrap();
        assert!(rel_err(&n1.matvec(&y), &[1.0, 0.5]) < 1e-12);
    }

    #[test]
    fn rectangular_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a3, a2, a1) = (
            rand_mat(&mut rng, 2, 3),
            rand_mat(&mut rng, 4, 2),
            rand_mat(&mut rng, 1, 2),
        );
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = kron3_apply(&a3, &a2, &a1, &x).unwrap();
        let dense = kron_product(&a3, &kron_product(&a2, &a1));
        assert!(rel_err(&y, &dense.matvec(&x)) < 1e-14);
    }
}
