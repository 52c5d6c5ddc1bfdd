//! Geometry maps, univariate factors and Galerkin assembly of the Stokes system.

pub mod geometry;
pub mod system;
pub mod tensor;
pub mod univariate;

pub use geometry::{make_geometry, GeometryKind, GeometryMap, ViscosityField};
pub use system::{
    assemble_pressure_mass, assemble_rt_parametric, assemble_th, dirichlet_lifting, BlockFormat,
    ComponentSpace, DirichletData, Discretization, GridSamples, StokesSpaces, StokesSystem,
};
pub use tensor::{assemble_form, BlockMatrix, DirectionPairs, FormTerm, KronBlock};
pub use univariate::{kept_indices, univariate_km, univariate_km_nitsche, UnivariateFactors};
