use thiserror::Error;

/// Errors reported by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("evaluation point {0} outside the parametric interval [0, 1]")]
    Domain(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("generalized eigenproblem: {0}")]
    Pencil(String),
    #[error("nonpositive weight {value} at node {index}")]
    Weight { index: usize, value: f64 },
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("viscosity: {0}")]
    Viscosity(String),
    #[error("singular operator: {0}")]
    SingularOperator(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("size guard exceeded: dimension {dim} > {limit}")]
    SizeGuard { dim: usize, limit: usize },
    #[error("separable fit: {0}")]
    Fit(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
