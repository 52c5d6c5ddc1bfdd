use crate::error::{Error, Result};
use crate::linalg::dense::DenseMatrix;
use crate::scalar::Real;

/// Compressed sparse row matrix with sorted column indices in every row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n as u32).collect(),
            values: vec![T::one(); n],
        }
    }

    /// Builds from raw arrays, validating the structure.
    pub fn from_parts(
        nrows: usize,
        ncols: usize,
        indptr: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<T>,
    ) -> Result<Self> {
        if indptr.len() != nrows + 1 || indptr[0] != 0 {
            return Err(Error::Shape("row pointer length".into()));
        }
        if *indptr.last().unwrap() != indices.len() || indices.len() != values.len() {
            return Err(Error::Shape("nonzero count mismatch".into()));
        }
        if ncols > u32::MAX as usize {
            return Err(Error::Shape("too many columns for 32-bit indices".into()));
        }
        for i in 0..nrows {
            if indptr[i + 1] < indptr[i] {
                return Err(Error::Shape("row pointers decrease".into()));
            }
            let cols = &indices[indptr[i]..indptr[i + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Shape(format!("unsorted columns in row {i}")));
            }
            if cols.last().map_or(false, |&c| c as usize >= ncols) {
                return Err(Error::Shape(format!("column out of range in row {i}")));
            }
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    /// Builds from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, T)],
    ) -> Result<Self> {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::Shape(format!("triplet ({i}, {j}) out of range")));
            }
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0u32; triplets.len()];
        let mut vals = vec![T::zero(); triplets.len()];
        for &(i, j, v) in triplets {
            cols[next[i]] = j as u32;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut row: Vec<(u32, T)> = Vec::new();
        for i in 0..nrows {
            row.clear();
            row.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            row.sort_by_key(|e| e.0);
            for &(c, v) in &row {
                if indices.len() > indptr[i] && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr[i + 1] = indices.len();
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    /// Keeps entries with `|a_ij| > drop_tol`.
    pub fn from_dense(a: &DenseMatrix<T>, drop_tol: T) -> Self {
        let mut indptr = vec![0usize; a.nrows() + 1];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..a.nrows() {
            for (j, &v) in a.row(i).iter().enumerate() {
                if v.abs() > drop_tol {
                    indices.push(j as u32);
                    values.push(v);
                }
            }
            indptr[i + 1] = indices.len();
        }
        Self {
            nrows: a.nrows(),
            ncols: a.ncols(),
            indptr,
            indices,
            values,
        }
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
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[T]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => vals[k],
            Err(_) => T::zero(),
        }
    }

    /// `y = A x`
    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols, "matvec input length");
        assert_eq!(y.len(), self.nrows, "matvec output length");
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut s = T::zero();
            for (c, v) in cols.iter().zip(vals) {
                s += *v * x[*c as usize];
            }
            *yi = s;
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `y += alpha A x`
    pub fn matvec_add(&self, alpha: T, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols, "matvec input length");
        assert_eq!(y.len(), self.nrows, "matvec output length");
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut s = T::zero();
            for (c, v) in cols.iter().zip(vals) {
                s += *v * x[*c as usize];
            }
            *yi += alpha * s;
        }
    }

    /// `y += alpha A^T x`
    pub fn transpose_matvec_add(&self, alpha: T, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.nrows, "transpose matvec input length");
        assert_eq!(y.len(), self.ncols, "transpose matvec output length");
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let a = alpha * xi;
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                y[*c as usize] += a * *v;
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut indices = vec![0u32; self.nnz()];
        let mut values = vec![T::zero(); self.nnz()];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                let slot = &mut next[*c as usize];
                indices[*slot] = i as u32;
                values[*slot] = *v;
                *slot += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: counts,
            indices,
            values,
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// Keeps the columns whose entry in `new_index` is `Some`, renumbered accordingly.
    pub fn select_columns(&self, new_index: &[Option<usize>], new_ncols: usize) -> Self {
        assert_eq!(new_index.len(), self.ncols, "column map length");
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                if let Some(nc) = new_index[*c as usize] {
                    indices.push(nc as u32);
                    values.push(*v);
                }
            }
            indptr[i + 1] = indices.len();
        }
        Self {
            nrows: self.nrows,
            ncols: new_ncols,
            indptr,
            indices,
            values,
        }
    }

    /// Dense copy, refused above `limit` rows or columns.
    pub fn to_dense(&self, limit: usize) -> Result<DenseMatrix<T>> {
        let dim = self.nrows.max(self.ncols);
        if dim > limit {
            return Err(Error::SizeGuard { dim, limit });
        }
        let mut a = DenseMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                a[(i, *c as usize)] = *v;
            }
        }
        Ok(a)
    }

    /// Largest `|a_ij - a_ji|` over stored entries of either triangle.
    pub fn symmetry_defect(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                worst = worst.max((*v - self.get(*c as usize, i)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Sum of `self` and `other`, which must have the same shape.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::Shape("sparse sum of different shapes".into()));
        }
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(self.nnz().max(other.nnz()));
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut a, mut b) = (0, 0);
            while a < ca.len() || b < cb.len() {
                if b == cb.len() || (a < ca.len() && ca[a] < cb[b]) {
                    indices.push(ca[a]);
                    values.push(va[a]);
                    a += 1;
                } else if a == ca.len() || cb[b] < ca[a] {
                    indices.push(cb[b]);
                    values.push(vb[b]);
                    b += 1;
                } else {
                    indices.push(ca[a]);
                    values.push(va[a] + vb[b]);
                    a += 1;
                    b += 1;
                }
            }
            indptr[i + 1] = indices.len();
        }
        Ok(Self {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            values,
        })
    }

    /// `(A + Aᵀ) / 2` for a square matrix.
    pub fn symmetrized(&self) -> Result<Self> {
        if self.nrows != self.ncols {
            return Err(Error::Shape("symmetrizing a rectangular matrix".into()));
        }
        let mut s = self.add(&self.transpose())?;
        s.scale(T::half());
        Ok(s)
    }

    /// Approximate heap footprint in bytes.
    pub fn memory_bytes(&self) -> usize {
        self.indptr.len() * std::mem::size_of::<usize>()
            + self.indices.len() * 4
            + self.values.len() * std::mem::size_of::<T>()
    }
}
