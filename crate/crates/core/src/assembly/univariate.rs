use crate::assembly::tensor::DirectionPairs;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Real;
use crate::splines::{QuadGrid, SplineSpace};

/// Univariate stiffness and mass pair `(K, M)`, or its Nitsche-modified
/// variant `(K̃, M̃)`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnivariateFactors<T> {
    pub k: DenseMatrix<T>,
    pub m: DenseMatrix<T>,
}

/// Kept basis indices: all of them, or all but the first and last.
pub fn kept_indices(dim: usize, restrict_interior: bool) -> Vec<usize> {
    if restrict_interior {
        (1..dim.saturating_sub(1)).collect()
    } else {
        (0..dim).collect()
    }
}

/// Rejects weights that are not strictly positive and finite at every node.
pub fn check_weight<T: Real>(w: &[T], grid: &QuadGrid<T>) -> Result<()> {
    if w.len() != grid.len() {
        return Err(Error::Shape(format!(
            "weight has {} samples, quadrature grid {}",
            w.len(),
            grid.len()
        )));
    }
    match w.iter().position(|v| !(*v > T::zero()) || !v.is_finite()) {
        Some(index) => Err(Error::Weight {
            index,
            value: w[index].as_f64(),
        }),
        None => Ok(()),
    }
}

/// `K[l,s] = ∫ τ b'_l b'_s` and `M[l,s] = ∫ μ b_l b_s` with weights sampled at
/// the nodes of `grid` (`None` meaning the constant 1).
pub fn univariate_km<T: Real>(
    space: &SplineSpace<T>,
    tau: Option<&[T]>,
    mu: Option<&[T]>,
    grid: &QuadGrid<T>,
    restrict_interior: bool,
) -> Result<UnivariateFactors<T>> {
    for w in [tau, mu].into_iter().flatten() {
        check_weight(w, grid)?;
    }
    let kept = kept_indices(space.dim(), restrict_interior);
    let pairs = DirectionPairs::new(space, &kept, space, &kept, grid)?;
    Ok(UnivariateFactors {
        k: pairs.integrate(true, true, tau).symmetrized(),
        m: pairs.integrate(false, false, mu).symmetrized(),
    })
}

/// Nitsche-modified stiffness `K̃` and plain mass `M̃` on the full basis.
///
/// `K̃[l,s] = ∫ τ b'_l b'_s` plus, at each end point with exterior normal `n`,
/// `τ (−n b'_l b_s − n b'_s b_l + 2γ b_l b_s)` with `γ = c_pen / h`. The
/// boundary values of `τ` are taken from the first and last quadrature nodes.
pub fn univariate_km_nitsche<T: Real>(
    space: &SplineSpace<T>,
    c_pen: T,
    h: T,
    tau: Option<&[T]>,
    mu: Option<&[T]>,
    grid: &QuadGrid<T>,
) -> Result<UnivariateFactors<T>> {
    if !(c_pen > T::zero()) || !(h > T::zero()) {
        return Err(Error::Parameter(format!(
            "Nitsche penalty {} and mesh size {} must be positive",
            c_pen.as_f64(),
            h.as_f64()
        )));
    }
    let UnivariateFactors { mut k, m } = univariate_km(space, tau, mu, grid, false)?;
    let gamma = c_pen / h;
    let n = space.dim();
    let ends = [
        (T::zero(), -T::one(), tau.map_or(T::one(), |t| t[0])),
        (T::one(), T::one(), tau.map_or(T::one(), |t| t[t.len() - 1])),
    ];
    for (eta, normal, weight) in ends {
        let (first, ders) = space.eval_basis(eta, 1)?;
        let mut b = vec![T::zero(); n];
        let mut db = vec![T::zero(); n];
        for j in 0..ders[0].len() {
            b[first + j] = ders[0][j];
            db[first + j] = ders[1][j];
        }
        for l in 0..n {
            for s in 0..n {
                let v = -normal * (db[l] * b[s] + db[s] * b[l]) + T::two() * gamma * b[l] * b[s];
                if v != T::zero() {
                    k[(l, s)] += weight * v;
                }
            }
        }
    }
    Ok(UnivariateFactors { k, m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn assert_close(a: &DenseMatrix<f64>, b: &[&[f64]], tol: f64) {
        for (i, row) in b.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_abs_diff_eq!(a[(i, j)], *v, epsilon = tol);
            }
        }
    }

    #[test]
    fn linear_single_element() {
        let sp = SplineSpace::<f64>::new(1, 1, 0).unwrap();
        let grid = QuadGrid::new(1, 3).unwrap();
        let f = univariate_km(&sp, None, None, &grid, false).unwrap();
        assert_close(
            &f.m,
            &[&[1.0 / 3.0, 1.0 / 6.0], &[1.0 / 6.0, 1.0 / 3.0]],
            1e-15,
        );
        assert_close(&f.k, &[&[1.0, -1.0], &[-1.0, 1.0]], 1e-15);
    }

    #[test]
    fn weights_scale_linearly_and_unit_weights_are_exact() {
        let sp = SplineSpace::<f64>::new(3, 5, 1).unwrap();
        let grid = QuadGrid::new(5, 5).unwrap();
        let plain = univariate_km(&sp, None, None, &grid, true).unwrap();
        let ones = vec![1.0; grid.len()];
        let unit = univariate_km(&sp, Some(&ones), Some(&ones), &grid, true).unwrap();
        assert_eq!(plain, unit);
        let twos = vec![2.0; grid.len()];
        let doubled = univariate_km(&sp, None, Some(&twos), &grid, true).unwrap();
        for (a, b) in doubled.m.as_slice().iter().zip(plain.m.as_slice()) {
            assert_abs_diff_eq!(*a, 2.0 * b, epsilon = 1e-15);
        }
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let sp = SplineSpace::<f64>::new(4, 6, 2).unwrap();
        let grid = QuadGrid::new(6, 6).unwrap();
        let f = univariate_km(&sp, None, None, &grid, false).unwrap();
        for i in 0..sp.dim() {
            let s: f64 = f.k.row(i).iter().sum();
            assert!(s.abs() < 1e-13, "row {i} sums to {s}");
        }
        let total: f64 = f.m.as_slice().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
        let interior = univariate_km(&sp, None, None, &grid, true).unwrap();
        assert_eq!(interior.k.nrows(), sp.dim() - 2);
        assert!(crate::linalg::Cholesky::factor(&interior.k).is_ok());
    }

    #[test]
    fn rejects_nonpositive_weight() {
        let sp = SplineSpace::<f64>::new(2, 2, 1).unwrap();
        let grid = QuadGrid::new(2, 3).unwrap();
        let mut w = vec![1.0; grid.len()];
        w[4] = 0.0;
        assert_eq!(
            univariate_km(&sp, Some(&w), None, &grid, false),
            Err(Error::Weight {
                index: 4,
                value: 0.0
            })
        );
    }

    #[test]
    fn nitsche_linear_single_element() {
        let sp = SplineSpace::<f64>::new(1, 1, 0).unwrap();
        let grid = QuadGrid::new(1, 3).unwrap();
        let g = 7.5;
        let f = univariate_km_nitsche(&sp, g, 1.0, None, None, &grid).unwrap();
        assert_close(&f.k, &[&[2.0 * g - 1.0, 1.0], &[1.0, 2.0 * g - 1.0]], 1e-13);
        assert_close(
            &f.m,
            &[&[1.0 / 3.0, 1.0 / 6.0], &[1.0 / 6.0, 1.0 / 3.0]],
            1e-15,
        );
    }

    #[test]
    fn nitsche_matrix_symmetric_and_penalty_dominated() {
        let sp = SplineSpace::<f64>::new(2, 4, 1).unwrap();
        let grid = QuadGrid::new(4, 4).unwrap();
        let h = sp.mesh_size();
        let mut prev = f64::NEG_INFINITY;
        for c in [10.0, 100.0, 1000.0] {
            let f = univariate_km_nitsche(&sp, c, h, None, None, &grid).unwrap();
            assert!(f.k.is_symmetric(0.0));
            let top = crate::linalg::symmetric_eigenvalues(&f.k).unwrap()[sp.dim() - 1];
            assert!(top > prev);
            prev = top;
        }
        let f = univariate_km_nitsche(&sp, 5.0 * 2.0, h, None, None, &grid).unwrap();
        assert!(crate::linalg::Cholesky::factor(&f.k).is_ok());
        assert!(univariate_km_nitsche(&sp, 0.0, h, None, None, &grid).is_err());
    }
}
