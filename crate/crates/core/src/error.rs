use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field has {found} values but the grid has {expected} cells")]
    GridMismatch { expected: usize, found: usize },

    /// An argument left the open interval on which a prior function is finite.
    #[error("argument {value} outside the open domain ({lower}, {upper})")]
    Domain { value: f64, lower: f64, upper: f64 },

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("Legendre transform is unbounded at y = {0}")]
    UnboundedConjugate(f64),

    #[error("constraints (E = {energy}, Γ = {circulation}) are infeasible: {reason}")]
    Infeasible {
        energy: f64,
        circulation: f64,
        reason: String,
    },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("eigenvalue iteration did not converge after {0} steps")]
    EigenNonconvergence(usize),

    #[error("sampler unavailable: {0}")]
    SamplerUnavailable(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
