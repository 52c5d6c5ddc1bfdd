//! Univariate B-spline spaces on uniform open knot vectors and element-wise
//! Gauss–Legendre quadrature.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform open-knot B-spline space of degree `p` and interior regularity `α`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineSpace<T> {
    degree: usize,
    regularity: isize,
    n_el: usize,
    knots: Vec<T>,
    breakpoints: Vec<T>,
    dim: usize,
}

impl<T: Real> SplineSpace<T> {
    /// Builds the space with `n_el` equal elements on `[0, 1]`.
    pub fn new(degree: usize, n_el: usize, regularity: isize) -> Result<Self> {
        if degree < 1 {
            return Err(Error::Parameter(format!("degree {degree} < 1")));
        }
        if regularity < -1 || regularity > degree as isize - 1 {
            return Err(Error::Parameter(format!(
                "regularity {regularity} outside [-1, {}]",
                degree as isize - 1
            )));
        }
        if n_el < 1 {
            return Err(Error::Parameter("at least one element required".into()));
        }
        let mult = (degree as isize - regularity) as usize;
        let breakpoints: Vec<T> = (0..=n_el)
            .map(|i| T::from_usize_lossy(i) / T::from_usize_lossy(n_el))
            .collect();
        let mut knots = vec![T::zero(); degree + 1];
        for z in &breakpoints[1..n_el] {
            knots.extend(std::iter::repeat(*z).take(mult));
        }
        knots.extend(std::iter::repeat(T::one()).take(degree + 1));
        let dim = knots.len() - degree - 1;
        debug_assert_eq!(dim as isize, n_el as isize * mult as isize + regularity + 1);
        Ok(Self {
            degree,
            regularity,
            n_el,
            knots,
            breakpoints,
            dim,
        })
    }

    /// Maximal-regularity space, `α = p − 1`.
    pub fn smooth(degree: usize, n_el: usize) -> Result<Self> {
        Self::new(degree, n_el, degree as isize - 1)
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn regularity(&self) -> isize {
        self.regularity
    }

    #[inline]
    pub fn n_el(&self) -> usize {
        self.n_el
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn breakpoints(&self) -> &[T] {
        &self.breakpoints
    }

    pub fn mesh_size(&self) -> T {
        T::one() / T::from_usize_lossy(self.n_el)
    }

    /// Index of the first basis function supported on element `e`.
    #[inline]
    pub fn first_active(&self, e: usize) -> usize {
        e * (self.degree as isize - self.regularity) as usize
    }

    /// Element containing `η`: right-continuous, except `η = 1` which belongs
    /// to the last element.
    pub fn element_of(&self, eta: T) -> Result<usize> {
        if !(eta >= T::zero() && eta <= T::one()) {
            return Err(Error::Domain(eta.as_f64()));
        }
        let e = match self
            .breakpoints
            .binary_search_by(|z| z.partial_cmp(&eta).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        Ok(e.min(self.n_el - 1))
    }

    /// Evaluates the `p + 1` nonzero basis functions at `η` and their
    /// derivatives up to order `max_deriv`.
    ///
    /// Returns the index of the first active function and `ders[k][j]`, the
    /// `k`-th derivative of function `first + j`.
    pub fn eval_basis(&self, eta: T, max_deriv: usize) -> Result<(usize, Vec<Vec<T>>)> {
        if max_deriv > self.degree {
            return Err(Error::Parameter(format!(
                "derivative order {max_deriv} exceeds degree {}",
                self.degree
            )));
        }
        let e = self.element_of(eta)?;
        let span = self.degree + self.first_active(e);
        Ok((
            span - self.degree,
            self.ders_basis_funs(span, eta, max_deriv),
        ))
    }

    /// Cox–de Boor values and derivatives on knot span `span`.
    fn ders_basis_funs(&self, span: usize, u: T, n: usize) -> Vec<Vec<T>> {
        let p = self.degree;
        let u_k = &self.knots;
        let mut ndu = vec![vec![T::zero(); p + 1]; p + 1];
        let mut left = vec![T::zero(); p + 1];
        let mut right = vec![T::zero(); p + 1];
        ndu[0][0] = T::one();
        for j in 1..=p {
            left[j] = u - u_k[span + 1 - j];
            right[j] = u_k[span + j] - u;
            let mut saved = T::zero();
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![vec![T::zero(); p + 1]; n + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = vec![vec![T::zero(); p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = T::one();
            for k in 1..=n {
                let mut d = T::zero();
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize {
                    k - 1
                } else {
                    p - r
                };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = T::from_usize_lossy(p);
        for k in 1..=n {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= T::from_usize_lossy(p - k);
        }
        ders
    }

    /// Values (and first derivatives if `with_derivative`) of all active
    /// functions at every node of `grid`.
    pub fn tabulate(&self, grid: &QuadGrid<T>, max_deriv: usize) -> Result<BasisTable<T>> {
        if grid.n_el() != self.n_el {
            return Err(Error::Shape(format!(
                "quadrature grid has {} elements, space has {}",
                grid.n_el(),
                self.n_el
            )));
        }
        if max_deriv > self.degree {
            return Err(Error::Parameter("derivative order exceeds degree".into()));
        }
        let p1 = self.degree + 1;
        let npts = grid.len();
        let mut values = vec![T::zero(); (max_deriv + 1) * npts * p1];
        let mut first = Vec::with_capacity(npts);
        for e in 0..self.n_el {
            let span = self.degree + self.first_active(e);
            for (j, &x) in grid.element_nodes(e).iter().enumerate() {
                let pt = e * grid.q() + j;
                let ders = self.ders_basis_funs(span, x, max_deriv);
                for (k, row) in ders.iter().enumerate() {
                    let off = (k * npts + pt) * p1;
                    values[off..off + p1].copy_from_slice(row);
                }
                first.push(span - self.degree);
            }
        }
        Ok(BasisTable {
            npts,
            nfun: p1,
            nder: max_deriv + 1,
            first,
            values,
        })
    }
}

/// Basis values at the nodes of a quadrature grid.
#[derive(Clone, Debug)]
pub struct BasisTable<T> {
    npts: usize,
    nfun: usize,
    nder: usize,
    first: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> BasisTable<T> {
    #[inline]
    pub fn npts(&self) -> usize {
        self.npts
    }

    /// Number of active functions per point (`p + 1`).
    #[inline]
    pub fn nfun(&self) -> usize {
        self.nfun
    }

    #[inline]
    pub fn max_deriv(&self) -> usize {
        self.nder - 1
    }

    #[inline]
    pub fn first(&self, pt: usize) -> usize {
        self.first[pt]
    }

    /// Derivative `k` of the active functions at point `pt`.
    #[inline]
    pub fn values(&self, k: usize, pt: usize) -> &[T] {
        let off = (k * self.npts + pt) * self.nfun;
        &self.values[off..off + self.nfun]
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]` (f64 Newton iteration).
pub fn gauss_legendre_unit(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..(q + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=q {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pq = if q == 1 { x } else { p1 };
            let pqm1 = if q == 1 { 1.0 } else { p0 };
            dp = q as f64 * (x * pq - pqm1) / (x * x - 1.0);
            let dx = pq / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[q - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[q - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule repeated on every element of a uniform partition.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadGrid<T> {
    q: usize,
    n_el: usize,
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> QuadGrid<T> {
    pub fn new(n_el: usize, q: usize) -> Result<Self> {
        if q < 1 || n_el < 1 {
            return Err(Error::Parameter(format!(
                "quadrature with q={q}, n_el={n_el}"
            )));
        }
        let (x, w) = gauss_legendre_unit(q);
        let h = 1.0 / n_el as f64;
        let mut nodes = Vec::with_capacity(n_el * q);
        let mut weights = Vec::with_capacity(n_el * q);
        for e in 0..n_el {
            let a = e as f64 * h;
            for j in 0..q {
                nodes.push(T::lit(a + h * x[j]));
                weights.push(T::lit(h * w[j]));
            }
        }
        Ok(Self {
            q,
            n_el,
            nodes,
            weights,
        })
    }

    /// Grid matching the elements of `space`.
    pub fn for_space(space: &SplineSpace<T>, q: usize) -> Result<Self> {
        Self::new(space.n_el(), q)
    }

    #[inline]
    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn n_el(&self) -> usize {
        self.n_el
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn element_nodes(&self, e: usize) -> &[T] {
        &self.nodes[e * self.q..(e + 1) * self.q]
    }

    pub fn element_weights(&self, e: usize) -> &[T] {
        &self.weights[e * self.q..(e + 1) * self.q]
    }
}
