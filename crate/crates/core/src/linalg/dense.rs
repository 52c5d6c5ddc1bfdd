use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    nrows: usize,
    ncols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![T::zero(); nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diagonal(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(nrows * ncols);
        for i in 0..nrows {
            for j in 0..ncols {
                data.push(f(i, j));
            }
        }
        Self { nrows, ncols, data }
    }

    pub fn from_row_major(nrows: usize, ncols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::Shape(format!(
                "{} values for a {nrows}x{ncols} matrix",
                data.len()
            )));
        }
        Ok(Self { nrows, ncols, data })
    }

    /// Builds from nested row slices; panics on ragged input (test convenience).
    pub fn from_rows(rows: &[&[T]]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            assert_eq!(r.len(), ncols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { nrows, ncols, data }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.ncols, self.nrows, |i, j| self[(j, i)])
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            nrows: self.nrows,
            ncols: self.ncols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::Shape("matrix sum of different shapes".into()));
        }
        Ok(Self {
            nrows: self.nrows,
            ncols: self.ncols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a + *b)
                .collect(),
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.ncols != other.nrows {
            return Err(Error::Shape(format!(
                "{}x{} times {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut out = Self::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            let orow = &mut out.data[i * other.ncols..(i + 1) * other.ncols];
            for k in 0..self.ncols {
                let a = self.data[i * self.ncols + k];
                if a == T::zero() {
                    continue;
                }
                let brow = &other.data[k * other.ncols..(k + 1) * other.ncols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * *b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols, "matvec dimension");
        (0..self.nrows)
            .map(|i| crate::scalar::dot(self.row(i), x))
            .collect()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        if !self.is_square() {
            return false;
        }
        for i in 0..self.nrows {
            for j in 0..i {
                if (self[(i, j)] - self[(j, i)]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Returns `(A + A^T) / 2`.
    pub fn symmetrized(&self) -> Self {
        Self::from_fn(self.nrows, self.ncols, |i, j| {
            (self[(i, j)] + self[(j, i)]) * T::half()
        })
    }

    /// Drops the first `skip_front` and last `skip_back` rows and columns.
    pub fn principal_submatrix(&self, skip_front: usize, skip_back: usize) -> Self {
        let n = self.nrows - skip_front - skip_back;
        Self::from_fn(n, n, |i, j| self[(i + skip_front, j + skip_front)])
    }

    /// Smallest `b` with `A[i][j] == 0` whenever `|i - j| > b`.
    pub fn bandwidth(&self) -> usize {
        let mut b = 0;
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                if self[(i, j)] != T::zero() {
                    b = b.max(i.abs_diff(j));
                }
            }
        }
        b
    }
}

impl<T> Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.ncols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.ncols + j]
    }
}

/// Dense Cholesky factor `A = L L^T`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: DenseMatrix<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn factor(a: &DenseMatrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape("Cholesky of a non-square matrix".into()));
        }
        let n = a.nrows();
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::Factorization(format!(
                    "nonpositive pivot {} at row {j}",
                    d.as_f64()
                )));
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn lower(&self) -> &DenseMatrix<T> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [T]) {
        let n = self.dim();
        for i in 0..n {
            let row = self.l.row(i);
            let mut s = b[i];
            for k in 0..i {
                s -= row[k] * b[k];
            }
            b[i] = s / row[i];
        }
    }

    /// Solves `L^T x = y` in place.
    pub fn solve_upper_in_place(&self, b: &mut [T]) {
        let n = self.dim();
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        self.solve_lower_in_place(b);
        self.solve_upper_in_place(b);
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: DenseMatrix<T>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    pub fn factor(a: &DenseMatrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape("LU of a non-square matrix".into()));
        }
        let n = a.nrows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(T::min_positive_value());
        for k in 0..n {
            let (mut piv, mut best) = (k, lu[(k, k)].abs());
            for i in k + 1..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    piv = i;
                    best = v;
                }
            }
            if best <= scale * T::epsilon() * T::lit(8.0) {
                return Err(Error::Factorization(format!(
                    "singular matrix at column {k}"
                )));
            }
            if piv != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(piv, j)];
                    lu[(piv, j)] = tmp;
                }
                perm.swap(k, piv);
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != T::zero() {
                    for j in k + 1..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= f * u;
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.nrows();
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.lu[(i, k)] * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.lu[(i, k)] * x[k];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }
}

/// Cholesky factorization of a symmetric positive definite banded matrix.
///
/// Storage: `band[i * (b + 1) + (b - (i - j))] = L[i][j]` for `i - b <= j <= i`.
#[derive(Clone, Debug)]
pub struct BandCholesky<T> {
    n: usize,
    b: usize,
    band: Vec<T>,
}

impl<T: Real> BandCholesky<T> {
    pub fn factor(a: &DenseMatrix<T>, bandwidth: usize) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape(
                "banded Cholesky of a non-square matrix".into(),
            ));
        }
        let n = a.nrows();
        let b = bandwidth.min(n.saturating_sub(1));
        let w = b + 1;
        let mut band = vec![T::zero(); n * w];
        for i in 0..n {
            let j0 = i.saturating_sub(b);
            for j in j0..=i {
                let mut s = a[(i, j)];
                let k0 = j0.max(j.saturating_sub(b));
                for k in k0..j {
                    s -= band[i * w + b + k - i] * band[j * w + b + k - j];
                }
                if i == j {
                    if !(s > T::zero()) {
                        return Err(Error::Factorization(format!(
                            "nonpositive pivot {} at row {i}",
                            s.as_f64()
                        )));
                    }
                    band[i * w + b] = s.sqrt();
                } else {
                    band[i * w + b + j - i] = s / band[j * w + b];
                }
            }
        }
        Ok(Self { n, b, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.b
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> T {
        self.band[i * (self.b + 1) + self.b + j - i]
    }

    /// Solves `L L^T x = rhs` in place; `stride` selects every `stride`-th entry from `offset`.
    pub fn solve_strided(&self, x: &mut [T], offset: usize, stride: usize) {
        let n = self.n;
        for i in 0..n {
            let mut s = x[offset + i * stride];
            for k in i.saturating_sub(self.b)..i {
                s -= self.l(i, k) * x[offset + k * stride];
            }
            x[offset + i * stride] = s / self.l(i, i);
        }
        for i in (0..n).rev() {
            let mut s = x[offset + i * stride];
            for k in i + 1..(i + self.b + 1).min(n) {
                s -= self.l(k, i) * x[offset + k * stride];
            }
            x[offset + i * stride] = s / self.l(i, i);
        }
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        self.solve_strided(x, 0, 1);
    }
}

/// Solves a dense linear system by LU; used by tests and small oracles.
pub fn dense_solve<T: Real>(a: &DenseMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    Ok(Lu::factor(a)?.solve(b))
}
