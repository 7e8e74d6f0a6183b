use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid basis: {0}")]
    InvalidBasis(&'static str),
    #[error("invalid model structure: {0}")]
    InvalidStructure(String),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("history does not contain step {0}")]
    InsufficientHistory(i64),
    #[error("lag {lag} out of range for model order {order}")]
    LagOutOfRange { lag: usize, order: usize },
    #[error("initial information matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("forgetting factor {0} outside (0, 1]")]
    ForgettingFactor(f64),
    #[error("filter threshold {0} must be positive")]
    FilterThreshold(f64),
    #[error("infeasible control bounds [{min}, {max}]")]
    InfeasibleBounds { min: f64, max: f64 },
    #[error("equality constraint output block is not unit lower triangular")]
    ConstraintStructure,
    #[error("reduced Hessian is singular even after ridge regularization")]
    SingularHessian,
    #[error("active-set loop did not terminate within {0} iterations")]
    ActiveSetLimit(usize),
    #[error("invalid horizon configuration: {0}")]
    InvalidHorizon(&'static str),
    #[error("invalid simulation configuration: {0}")]
    InvalidSimulation(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}
