pub mod assembly;
pub mod bench;
pub mod error;
pub mod fd;
pub mod kron;
pub mod krylov;
pub mod linalg;
pub mod precond;
pub mod scalar;
pub mod spectral;
pub mod splines;

pub use error::{Error, Result};
pub use scalar::Real;

// Double-precision instantiations.
pub type SplineSpaceF64 = crate::splines::SplineSpace<f64>;
pub type QuadGridF64 = crate::splines::QuadGrid<f64>;
pub type Tensor3F64 = crate::kron::Tensor3<f64>;
pub type KronOperatorF64 = crate::kron::KronOperator<f64>;
pub type FDSolverF64 = crate::fd::FDSolver<f64>;
pub type DenseMatrixF64 = crate::linalg::DenseMatrix<f64>;
pub type CsrMatrixF64 = crate::linalg::CsrMatrix<f64>;
pub type GeometryMapF64 = crate::assembly::GeometryMap<f64>;
pub type ViscosityFieldF64 = crate::assembly::ViscosityField<f64>;
pub type StokesSpacesF64 = crate::assembly::StokesSpaces<f64>;
pub type StokesSystemF64 = crate::assembly::StokesSystem<f64>;
pub type VelocityPreconditionerF64 = crate::precond::VelocityPreconditioner<f64>;
pub type PressurePreconditionerF64 = crate::precond::PressurePreconditioner<f64>;
