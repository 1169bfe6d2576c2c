use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("polynomial degree {0} is outside the supported range 0..=6")]
    DegreeOutOfRange(usize),

    #[error("unsupported element: {0}")]
    UnsupportedElement(String),

    #[error("generalized Vandermonde matrix for {element} is singular (smallest pivot {pivot:e})")]
    SingularVandermonde { element: String, pivot: f64 },

    #[error("derivative order {0} is not supported")]
    OrderUnsupported(usize),

    #[error("point ({0}, {1}) lies outside the reference triangle")]
    PointOutsideReference(f64, f64),

    #[error("quadrature degree {0} is outside the supported range")]
    QuadratureDegree(usize),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("cell {cell} is degenerate (signed area {area:e})")]
    DegenerateCell { cell: usize, area: f64 },

    #[error("element {element} cannot be used with the {form} form")]
    IncompatibleForm { element: String, form: String },

    #[error("matrix is singular to working precision")]
    Singular,

    #[error("system of size {0} exceeds the dense solver limit of {1}")]
    TooLarge(usize, usize),

    #[error("CG did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("invalid study: {0}")]
    InvalidStudy(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
