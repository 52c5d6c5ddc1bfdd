//! Dense and sparse linear algebra kernels.

pub mod dense;
pub mod eig;
pub mod sparse;

pub use dense::{dense_solve, BandCholesky, Cholesky, DenseMatrix, Lu};
pub use eig::{symmetric_eigenvalues, SymmetricEigen};
pub use sparse::CsrMatrix;
