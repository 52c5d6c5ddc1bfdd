//! Global sum-factorized assembly of trivariate bilinear forms over tensor
//! B-spline bases, plus the two block representations produced by it.

use crate::error::{Error, Result};
use crate::kron::mode_product_slice;
use crate::linalg::{CsrMatrix, DenseMatrix};
use crate::scalar::Real;
use crate::splines::{QuadGrid, SplineSpace};

/// Interacting (test, trial) function pairs of one parametric direction.
///
/// For every pair the products `ψ^(x) φ^(y) w` at the shared quadrature
/// points are stored for the four derivative patterns `xy ∈ {00, 01, 10, 11}`.
#[derive(Clone, Debug)]
pub struct DirectionPairs<T> {
    n_rows: usize,
    n_cols: usize,
    npts: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    pt_start: Vec<usize>,
    w_off: Vec<usize>,
    w: [Vec<T>; 4],
}

impl<T: Real> DirectionPairs<T> {
    /// `rows` and `cols` list the kept global basis indices of the test and
    /// trial spaces, in increasing order.
    pub fn new(
        test: &SplineSpace<T>,
        rows: &[usize],
        trial: &SplineSpace<T>,
        cols: &[usize],
        grid: &QuadGrid<T>,
    ) -> Result<Self> {
        if test.n_el() != trial.n_el() || grid.n_el() != test.n_el() {
            return Err(Error::Shape(
                "test, trial and quadrature partitions differ".into(),
            ));
        }
        for (list, sp) in [(rows, test), (cols, trial)] {
            if list.windows(2).any(|w| w[0] >= w[1]) || list.last().is_some_and(|&i| i >= sp.dim())
            {
                return Err(Error::Shape(
                    "kept index list must be increasing and in range".into(),
                ));
            }
        }
        let tt = test.tabulate(grid, 1)?;
        let ts = trial.tabulate(grid, 1)?;
        let q = grid.q();
        let n_el = grid.n_el();
        let support = |sp: &SplineSpace<T>| {
            let mut lo = vec![usize::MAX; sp.dim()];
            let mut hi = vec![0usize; sp.dim()];
            for e in 0..n_el {
                let f = sp.first_active(e);
                for g in f..=f + sp.degree() {
                    lo[g] = lo[g].min(e);
                    hi[g] = hi[g].max(e);
                }
            }
            (lo, hi)
        };
        let (lo_t, hi_t) = support(test);
        let (lo_s, hi_s) = support(trial);
        let mut col_of = vec![usize::MAX; trial.dim()];
        for (c, &g) in cols.iter().enumerate() {
            col_of[g] = c;
        }

        let mut row_ptr = vec![0usize];
        let mut col = Vec::new();
        let mut pt_start = Vec::new();
        let mut w_off = vec![0usize];
        let mut w: [Vec<T>; 4] = Default::default();
        let weights = grid.weights();
        for &gi in rows {
            let f_lo = trial.first_active(lo_t[gi]);
            let f_hi = trial.first_active(hi_t[gi]) + trial.degree();
            for gj in f_lo..=f_hi {
                let c = col_of[gj];
                if c == usize::MAX {
                    continue;
                }
                let e0 = lo_t[gi].max(lo_s[gj]);
                let e1 = hi_t[gi].min(hi_s[gj]);
                if e0 > e1 {
                    continue;
                }
                col.push(c);
                pt_start.push(e0 * q);
                for pt in e0 * q..(e1 + 1) * q {
                    let it = gi - tt.first(pt);
                    let is = gj - ts.first(pt);
                    let (v0, v1) = (tt.values(0, pt)[it], tt.values(1, pt)[it]);
                    let (u0, u1) = (ts.values(0, pt)[is], ts.values(1, pt)[is]);
                    let wt = weights[pt];
                    w[0].push(v0 * u0 * wt);
                    w[1].push(v0 * u1 * wt);
                    w[2].push(v1 * u0 * wt);
                    w[3].push(v1 * u1 * wt);
                }
                w_off.push(w[0].len());
            }
            row_ptr.push(col.len());
        }
        Ok(Self {
            n_rows: rows.len(),
            n_cols: cols.len(),
            npts: grid.len(),
            row_ptr,
            col,
            pt_start,
            w_off,
            w,
        })
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn n_pairs(&self) -> usize {
        self.col.len()
    }

    #[inline]
    pub fn npts(&self) -> usize {
        self.npts
    }

    #[inline]
    fn pair_values(&self, xy: usize, p: usize) -> &[T] {
        &self.w[xy][self.w_off[p]..self.w_off[p + 1]]
    }

    /// Dense `∫ weight ψ_i^(x) φ_j^(y)` over kept rows and columns.
    pub fn integrate(
        &self,
        test_deriv: bool,
        trial_deriv: bool,
        weight: Option<&[T]>,
    ) -> DenseMatrix<T> {
        let xy = 2 * test_deriv as usize + trial_deriv as usize;
        let mut out = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                let vals = self.pair_values(xy, p);
                let s = match weight {
                    Some(wt) => vals
                        .iter()
                        .zip(&wt[self.pt_start[p]..])
                        .map(|(a, b)| *a * *b)
                        .sum(),
                    None => vals.iter().copied().sum(),
                };
                out[(r, self.col[p])] = s;
            }
        }
        out
    }
}

/// One term `∫ C(η) ∂_a ψ ∂_b φ` of a trivariate form. Derivative index `0`
/// means no derivative, `1..=3` the parametric direction.
#[derive(Clone, Debug)]
pub struct FormTerm<T> {
    pub test_deriv: usize,
    pub trial_deriv: usize,
    /// Coefficient at the tensor quadrature grid, `q1` fastest.
    pub coeff: Vec<T>,
}

impl<T> FormTerm<T> {
    fn pattern(&self, d: usize) -> usize {
        2 * (self.test_deriv == d + 1) as usize + (self.trial_deriv == d + 1) as usize
    }
}

/// Assembles `Σ_terms ∫ C ∂ψ_i ∂φ_j` as a CSR matrix over the kept tensor
/// test (rows) and trial (columns) indices, `x1` fastest.
pub fn assemble_form<T: Real>(
    dirs: &[DirectionPairs<T>; 3],
    terms: &[FormTerm<T>],
) -> Result<CsrMatrix<T>> {
    let q = [dirs[0].npts, dirs[1].npts, dirs[2].npts];
    let npts = q[0] * q[1] * q[2];
    for t in terms {
        if t.coeff.len() != npts || t.test_deriv > 3 || t.trial_deriv > 3 {
            return Err(Error::Shape(
                "form term does not match the quadrature grid".into(),
            ));
        }
    }
    let p = [dirs[0].n_pairs(), dirs[1].n_pairs(), dirs[2].n_pairs()];
    let mut out = vec![T::zero(); p[0] * p[1] * p[2]];
    let mut t1 = vec![T::zero(); p[0] * q[1] * q[2]];
    let mut t2 = vec![T::zero(); p[0] * p[1] * q[2]];

    for pattern3 in 0..4 {
        let group: Vec<&FormTerm<T>> = terms.iter().filter(|t| t.pattern(2) == pattern3).collect();
        if group.is_empty() {
            continue;
        }
        t2.fill(T::zero());
        for term in group {
            let (x1, x2) = (term.pattern(0), term.pattern(1));
            let d1 = &dirs[0];
            for q23 in 0..q[1] * q[2] {
                let c = &term.coeff[q23 * q[0]..(q23 + 1) * q[0]];
                let dst = &mut t1[q23 * p[0]..(q23 + 1) * p[0]];
                for (pi, o) in dst.iter_mut().enumerate() {
                    let vals = d1.pair_values(x1, pi);
                    let s0 = d1.pt_start[pi];
                    *o = vals.iter().zip(&c[s0..]).map(|(a, b)| *a * *b).sum();
                }
            }
            let d2 = &dirs[1];
            for q3 in 0..q[2] {
                for p2 in 0..p[1] {
                    let vals = d2.pair_values(x2, p2);
                    let s0 = d2.pt_start[p2];
                    let o0 = p[0] * (p2 + p[1] * q3);
                    for (k, &wv) in vals.iter().enumerate() {
                        let src0 = p[0] * (s0 + k + q[1] * q3);
                        let (src, dst) = (&t1[src0..src0 + p[0]], &mut t2[o0..o0 + p[0]]);
                        for (o, s) in dst.iter_mut().zip(src) {
                            *o += wv * *s;
                        }
                    }
                }
            }
        }
        let d3 = &dirs[2];
        let slab = p[0] * p[1];
        for p3 in 0..p[2] {
            let vals = d3.pair_values(pattern3, p3);
            let s0 = d3.pt_start[p3];
            let dst = &mut out[p3 * slab..(p3 + 1) * slab];
            for (k, &wv) in vals.iter().enumerate() {
                let src = &t2[(s0 + k) * slab..(s0 + k + 1) * slab];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += wv * *s;
                }
            }
        }
    }

    let nr = [dirs[0].n_rows, dirs[1].n_rows, dirs[2].n_rows];
    let nc = [dirs[0].n_cols, dirs[1].n_cols, dirs[2].n_cols];
    let nrows = nr[0] * nr[1] * nr[2];
    let ncols = nc[0] * nc[1] * nc[2];
    if ncols > u32::MAX as usize {
        return Err(Error::Shape("too many columns for 32-bit indices".into()));
    }
    let len = |d: usize, r: usize| dirs[d].row_ptr[r + 1] - dirs[d].row_ptr[r];
    let mut indptr = Vec::with_capacity(nrows + 1);
    indptr.push(0usize);
    for r3 in 0..nr[2] {
        for r2 in 0..nr[1] {
            let l23 = len(2, r3) * len(1, r2);
            for r1 in 0..nr[0] {
                let last = *indptr.last().unwrap();
                indptr.push(last + l23 * len(0, r1));
            }
        }
    }
    let nnz = *indptr.last().unwrap();
    let mut indices = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    for r3 in 0..nr[2] {
        for r2 in 0..nr[1] {
            for r1 in 0..nr[0] {
                for p3 in dirs[2].row_ptr[r3]..dirs[2].row_ptr[r3 + 1] {
                    let c3 = dirs[2].col[p3];
                    for p2 in dirs[1].row_ptr[r2]..dirs[1].row_ptr[r2 + 1] {
                        let c23 = nc[0] * (dirs[1].col[p2] + nc[1] * c3);
                        let base = p[0] * (p2 + p[1] * p3);
                        for p1 in dirs[0].row_ptr[r1]..dirs[0].row_ptr[r1 + 1] {
                            indices.push((c23 + dirs[0].col[p1]) as u32);
                            values.push(out[base + p1]);
                        }
                    }
                }
            }
        }
    }
    drop(out);
    CsrMatrix::from_parts(nrows, ncols, indptr, indices, values)
}

/// Sum of weighted Kronecker products `Σ c (X3 ⊗ X2 ⊗ X1)` with rectangular
/// factors of common shapes.
#[derive(Clone, Debug)]
pub struct KronBlock<T> {
    row_dims: [usize; 3],
    col_dims: [usize; 3],
    terms: Vec<(T, [DenseMatrix<T>; 3])>,
    transposed: Vec<[DenseMatrix<T>; 3]>,
}

impl<T: Real> KronBlock<T> {
    pub fn new(row_dims: [usize; 3], col_dims: [usize; 3]) -> Self {
        Self {
            row_dims,
            col_dims,
            terms: Vec::new(),
            transposed: Vec::new(),
        }
    }

    /// Adds `c (x3 ⊗ x2 ⊗ x1)`; `factors = [x1, x2, x3]`.
    pub fn push(&mut self, coeff: T, factors: [DenseMatrix<T>; 3]) -> Result<()> {
        for (d, f) in factors.iter().enumerate() {
            if f.nrows() != self.row_dims[d] || f.ncols() != self.col_dims[d] {
                return Err(Error::Shape(format!(
                    "Kronecker factor {} is {}x{}, expected {}x{}",
                    d + 1,
                    f.nrows(),
                    f.ncols(),
                    self.row_dims[d],
                    self.col_dims[d]
                )));
            }
        }
        self.transposed.push([
            factors[0].transpose(),
            factors[1].transpose(),
            factors[2].transpose(),
        ]);
        self.terms.push((coeff, factors));
        Ok(())
    }

    pub fn row_dims(&self) -> [usize; 3] {
        self.row_dims
    }

    pub fn col_dims(&self) -> [usize; 3] {
        self.col_dims
    }

    pub fn nrows(&self) -> usize {
        self.row_dims.iter().product()
    }

    pub fn ncols(&self) -> usize {
        self.col_dims.iter().product()
    }

    pub fn terms(&self) -> &[(T, [DenseMatrix<T>; 3])] {
        &self.terms
    }

    pub fn transpose(&self) -> Self {
        Self {
            row_dims: self.col_dims,
            col_dims: self.row_dims,
            terms: self
                .terms
                .iter()
                .zip(&self.transposed)
                .map(|((c, _), t)| (*c, t.clone()))
                .collect(),
            transposed: self.terms.iter().map(|(_, f)| f.clone()).collect(),
        }
    }

    /// `y += alpha · self · x`
    pub fn matvec_add(&self, alpha: T, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols(), "Kronecker block input length");
        assert_eq!(y.len(), self.nrows(), "Kronecker block output length");
        let factors = self.terms.iter().map(|(c, f)| (*c, f));
        apply_terms(self.col_dims, self.row_dims, factors, alpha, x, y);
    }

    /// `y += alpha · selfᵀ · x`
    pub fn transpose_matvec_add(&self, alpha: T, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.nrows(), "Kronecker block input length");
        assert_eq!(y.len(), self.ncols(), "Kronecker block output length");
        let factors = self
            .terms
            .iter()
            .zip(&self.transposed)
            .map(|((c, _), t)| (*c, t));
        apply_terms(self.row_dims, self.col_dims, factors, alpha, x, y);
    }

    pub fn diagonal(&self) -> Vec<T> {
        let n = self.nrows().min(self.ncols());
        let mut d = vec![T::zero(); n];
        let [n1, n2, _] = self.row_dims;
        for (i, di) in d.iter_mut().enumerate() {
            let (i1, i2, i3) = (i % n1, (i / n1) % n2, i / (n1 * n2));
            let j = i;
            let [m1, m2, _] = self.col_dims;
            let (j1, j2, j3) = (j % m1, (j / m1) % m2, j / (m1 * m2));
            for (c, f) in &self.terms {
                *di += *c * f[0][(i1, j1)] * f[1][(i2, j2)] * f[2][(i3, j3)];
            }
        }
        d
    }

    /// Explicit sparse matrix; exact zeros of the factors are not stored.
    pub fn to_csr(&self) -> Result<CsrMatrix<T>> {
        let mut acc: Option<CsrMatrix<T>> = None;
        for (c, f) in &self.terms {
            let term = sparse_kron3(self.row_dims, self.col_dims, *c, f)?;
            acc = Some(match acc {
                None => term,
                Some(a) => a.add(&term)?,
            });
        }
        Ok(acc.unwrap_or_else(|| CsrMatrix::zeros(self.nrows(), self.ncols())))
    }
}

fn apply_terms<'a, T: Real>(
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    terms: impl Iterator<Item = (T, &'a [DenseMatrix<T>; 3])>,
    alpha: T,
    x: &[T],
    y: &mut [T],
) {
    let [c1, c2, c3] = in_dims;
    let [r1, r2, r3] = out_dims;
    let mut a = vec![T::zero(); r1 * c2 * c3];
    let mut b = vec![T::zero(); r1 * r2 * c3];
    let mut c = vec![T::zero(); r1 * r2 * r3];
    for (coeff, f) in terms {
        a.fill(T::zero());
        b.fill(T::zero());
        c.fill(T::zero());
        mode_product_slice([c1, c2, c3], x, &f[0], 1, &mut a);
        mode_product_slice([r1, c2, c3], &a, &f[1], 2, &mut b);
        mode_product_slice([r1, r2, c3], &b, &f[2], 3, &mut c);
        crate::scalar::axpy(alpha * coeff, &c, y);
    }
}

fn sparse_kron3<T: Real>(
    row_dims: [usize; 3],
    col_dims: [usize; 3],
    coeff: T,
    f: &[DenseMatrix<T>; 3],
) -> Result<CsrMatrix<T>> {
    let rows_nz: Vec<Vec<Vec<(usize, T)>>> = f
        .iter()
        .map(|m| {
            (0..m.nrows())
                .map(|i| {
                    m.row(i)
                        .iter()
                        .enumerate()
                        .filter(|(_, v)| **v != T::zero())
                        .map(|(j, v)| (j, *v))
                        .collect()
                })
                .collect()
        })
        .collect();
    let [n1, n2, n3] = row_dims;
    let [m1, m2, _] = col_dims;
    let mut indptr = vec![0usize];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for i3 in 0..n3 {
        for i2 in 0..n2 {
            for i1 in 0..n1 {
                for &(j3, v3) in &rows_nz[2][i3] {
                    for &(j2, v2) in &rows_nz[1][i2] {
                        let v23 = coeff * v3 * v2;
                        let base = m1 * (j2 + m2 * j3);
                        for &(j1, v1) in &rows_nz[0][i1] {
                            indices.push((base + j1) as u32);
                            values.push(v23 * v1);
                        }
                    }
                }
                indptr.push(indices.len());
            }
        }
    }
    CsrMatrix::from_parts(
        n1 * n2 * n3,
        col_dims.iter().product(),
        indptr,
        indices,
        values,
    )
}

/// A matrix block in either explicit sparse or Kronecker-structured form.
#[derive(Clone, Debug)]
pub enum BlockMatrix<T> {
    Sparse(CsrMatrix<T>),
    Kron(KronBlock<T>),
}

impl<T: Real> BlockMatrix<T> {
    pub fn nrows(&self) -> usize {
        match self {
            Self::Sparse(a) => a.nrows(),
            Self::Kron(a) => a.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Self::Sparse(a) => a.ncols(),
            Self::Kron(a) => a.ncols(),
        }
    }

    /// `y += alpha · self · x`
    pub fn matvec_add(&self, alpha: T, x: &[T], y: &mut [T]) {
        match self {
            Self::Sparse(a) => a.matvec_add(alpha, x, y),
            Self::Kron(a) => a.matvec_add(alpha, x, y),
        }
    }

    /// `y += alpha · selfᵀ · x`
    pub fn transpose_matvec_add(&self, alpha: T, x: &[T], y: &mut [T]) {
        match self {
            Self::Sparse(a) => a.transpose_matvec_add(alpha, x, y),
            Self::Kron(a) => a.transpose_matvec_add(alpha, x, y),
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows()];
        self.matvec_add(T::one(), x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<T> {
        match self {
            Self::Sparse(a) => a.diagonal(),
            Self::Kron(a) => a.diagonal(),
        }
    }

    pub fn to_csr(&self) -> Result<CsrMatrix<T>> {
        match self {
            Self::Sparse(a) => Ok(a.clone()),
            Self::Kron(a) => a.to_csr(),
        }
    }

    pub fn to_dense(&self, limit: usize) -> Result<DenseMatrix<T>> {
        self.to_csr()?.to_dense(limit)
    }

    /// Bytes held by the stored representation.
    pub fn memory_bytes(&self) -> usize {
        match self {
            Self::Sparse(a) => a.memory_bytes(),
            Self::Kron(a) => {
                a.terms
                    .iter()
                    .map(|(_, f)| f.iter().map(|m| m.nrows() * m.ncols()).sum::<usize>())
                    .sum::<usize>()
                    * std::mem::size_of::<T>()
            }
        }
    }
}
