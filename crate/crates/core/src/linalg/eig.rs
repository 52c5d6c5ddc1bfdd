//! Dense symmetric eigensolver: Householder tridiagonalization followed by
//! implicit QL iterations with Wilkinson-type shifts.

use crate::error::{Error, Result};
use crate::linalg::dense::DenseMatrix;
use crate::scalar::Real;

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SymmetricEigen<T> {
    pub values: Vec<T>,
    /// Column `j` is the unit eigenvector of `values[j]`.
    pub vectors: DenseMatrix<T>,
}

impl<T: Real> SymmetricEigen<T> {
    /// Full decomposition. The sign of every eigenvector is fixed so that its
    /// largest-magnitude entry is positive.
    pub fn new(a: &DenseMatrix<T>) -> Result<Self> {
        let n = check_square(a)?;
        let mut w = DenseMatrix::zeros(0, 0);
        let (mut d, mut e) = tridiagonalize(a.clone(), Some(&mut w));
        ql_implicit(&mut d, &mut e, Some(&mut w))?;

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).unwrap_or(std::cmp::Ordering::Equal));
        let values = order.iter().map(|&i| d[i]).collect();
        let mut vectors = DenseMatrix::zeros(n, n);
        for (col, &src) in order.iter().enumerate() {
            let row = w.row(src);
            let mut imax = 0;
            for k in 1..n {
                if row[k].abs() > row[imax].abs() {
                    imax = k;
                }
            }
            let sign = if row[imax] < T::zero() {
                -T::one()
            } else {
                T::one()
            };
            for k in 0..n {
                vectors[(k, col)] = sign * row[k];
            }
        }
        Ok(Self { values, vectors })
    }
}

/// Eigenvalues only, ascending.
pub fn symmetric_eigenvalues<T: Real>(a: &DenseMatrix<T>) -> Result<Vec<T>> {
    check_square(a)?;
    let (mut d, mut e) = tridiagonalize(a.clone(), None);
    ql_implicit(&mut d, &mut e, None)?;
    d.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    Ok(d)
}

fn check_square<T: Real>(a: &DenseMatrix<T>) -> Result<usize> {
    if !a.is_square() {
        return Err(Error::Shape(
            "eigendecomposition of a non-square matrix".into(),
        ));
    }
    if a.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("matrix has non-finite entries".into()));
    }
    Ok(a.nrows())
}

/// Reduces the symmetric matrix to tridiagonal form `A = Q T Q^T`.
///
/// Returns the diagonal `d` and the off-diagonal `e` (`e[i]` couples `i` and
/// `i + 1`, `e[n-1] = 0`). When `qt` is given it receives `Q^T` (row-major).
fn tridiagonalize<T: Real>(
    mut a: DenseMatrix<T>,
    qt: Option<&mut DenseMatrix<T>>,
) -> (Vec<T>, Vec<T>) {
    let n = a.nrows();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    let mut reflectors: Vec<(Vec<T>, T)> = Vec::new();
    let want_q = qt.is_some();

    for k in 0..n.saturating_sub(2) {
        let r = n - k - 1;
        let x: Vec<T> = a.row(k)[k + 1..].to_vec();
        let xnorm = x.iter().map(|v| *v * *v).sum::<T>().sqrt();
        d[k] = a[(k, k)];
        if xnorm == T::zero() {
            e[k] = T::zero();
            if want_q {
                reflectors.push((Vec::new(), T::zero()));
            }
            continue;
        }
        let alpha = if x[0] > T::zero() { -xnorm } else { xnorm };
        let mut v = x;
        v[0] -= alpha;
        let vtv = v.iter().map(|t| *t * *t).sum::<T>();
        e[k] = alpha;
        if vtv == T::zero() {
            if want_q {
                reflectors.push((Vec::new(), T::zero()));
            }
            continue;
        }
        let beta = T::two() / vtv;

        let mut p = vec![T::zero(); r];
        for (i, pi) in p.iter_mut().enumerate() {
            let row = &a.row(k + 1 + i)[k + 1..];
            *pi = beta * crate::scalar::dot(row, &v);
        }
        let kk = beta * T::half() * crate::scalar::dot(&p, &v);
        let w: Vec<T> = p.iter().zip(&v).map(|(pi, vi)| *pi - kk * *vi).collect();
        for i in 0..r {
            let (vi, wi) = (v[i], w[i]);
            let row = &mut a.row_mut(k + 1 + i)[k + 1..];
            for j in 0..r {
                row[j] -= vi * w[j] + wi * v[j];
            }
        }
        if want_q {
            reflectors.push((v, beta));
        }
    }
    if n >= 2 {
        d[n - 2] = a[(n - 2, n - 2)];
        d[n - 1] = a[(n - 1, n - 1)];
        e[n - 2] = a[(n - 1, n - 2)];
    } else if n == 1 {
        d[0] = a[(0, 0)];
    }

    if let Some(w) = qt {
        *w = DenseMatrix::identity(n);
        for (k, (v, beta)) in reflectors.iter().enumerate() {
            if v.is_empty() {
                continue;
            }
            let mut t = vec![T::zero(); n];
            for (i, vi) in v.iter().enumerate() {
                crate::scalar::axpy(*vi, w.row(k + 1 + i), &mut t);
            }
            for (i, vi) in v.iter().enumerate() {
                crate::scalar::axpy(-*beta * *vi, &t, w.row_mut(k + 1 + i));
            }
        }
    }
    (d, e)
}

/// Implicit QL on a symmetric tridiagonal matrix. Rotations are applied to the
/// rows of `w` so that its rows end up holding the eigenvectors.
fn ql_implicit<T: Real>(
    d: &mut [T],
    e: &mut [T],
    mut w: Option<&mut DenseMatrix<T>>,
) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    let eps = T::epsilon();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(Error::Factorization("QL iteration did not converge".into()));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (T::two() * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some(w) = w.as_deref_mut() {
                        let ncols = w.ncols();
                        let data = w.as_mut_slice();
                        let (lo, hi) = data.split_at_mut((i + 1) * ncols);
                        let ri = &mut lo[i * ncols..];
                        let ri1 = &mut hi[..ncols];
                        for k in 0..ncols {
                            let h = ri1[k];
                            ri1[k] = s * ri[k] + c * h;
                            ri[k] = c * ri[k] - s * h;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_symmetric(n: usize, seed: u64) -> DenseMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        a.symmetrized()
    }

    #[test]
    fn diagonal_matrix() {
        let a = DenseMatrix::from_diagonal(&[3.0, 1.0, 2.0]);
        let eig = SymmetricEigen::new(&a).unwrap();
        assert_eq!(eig.values, vec![1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(eig.vectors[(1, 0)], 1.0);
        assert_abs_diff_eq!(eig.vectors[(2, 1)], 1.0);
        assert_abs_diff_eq!(eig.vectors[(0, 2)], 1.0);
    }

    #[test]
    fn two_by_two_laplacian() {
        let a = DenseMatrix::from_rows(&[&[2.0f64, -1.0], &[-1.0, 2.0]]);
        let eig = SymmetricEigen::new(&a).unwrap();
        assert_abs_diff_eq!(eig.values[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.values[1], 3.0, epsilon = 1e-14);
        let s = 0.5f64.sqrt();
        assert_abs_diff_eq!(eig.vectors[(0, 0)].abs(), s, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.vectors[(1, 0)], eig.vectors[(0, 0)], epsilon = 1e-14);
    }

    #[test]
    fn reconstructs_random_matrices() {
        for (n, seed) in [(1, 1), (2, 2), (3, 3), (7, 4), (30, 5), (65, 6)] {
            let a = random_symmetric(n, seed);
            let eig = SymmetricEigen::new(&a).unwrap();
            let v = &eig.vectors;
            let vtv = v.transpose().matmul(v).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(vtv[(i, j)], expect, epsilon = 1e-12);
                }
            }
            let av = a.matmul(v).unwrap();
            for j in 0..n {
                for i in 0..n {
                    assert_abs_diff_eq!(av[(i, j)], v[(i, j)] * eig.values[j], epsilon = 1e-12);
                }
            }
            let vals = symmetric_eigenvalues(&a).unwrap();
            for (x, y) in vals.iter().zip(&eig.values) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn repeated_eigenvalues() {
        let a = DenseMatrix::<f64>::identity(5).scaled(4.0);
        let vals = symmetric_eigenvalues(&a).unwrap();
        assert!(vals.iter().all(|v| (*v - 4.0).abs() < 1e-14));
    }

    #[test]
    fn single_precision() {
        let a = DenseMatrix::from_rows(&[&[2.0f32, -1.0], &[-1.0, 2.0]]);
        let vals = symmetric_eigenvalues(&a).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-5 && (vals[1] - 3.0).abs() < 1e-5);
    }
}
