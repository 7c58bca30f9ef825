use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `λ = 0` was requested but `A` has no full column rank.
    #[error("rank deficient input: smallest singular value {sigma_min:e} vs largest {sigma_max:e}")]
    RankDeficient { sigma_min: f64, sigma_max: f64 },

    /// The small core matrix of the inverse formula cannot be inverted reliably.
    #[error("singular core matrix (condition {condition:e})")]
    SingularCore { condition: f64 },

    /// The small inner matrix of a Broyden or preconditioned update is singular.
    #[error("singular inner matrix (condition {condition:e})")]
    SingularInnerMatrix { condition: f64 },

    #[error("operator is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("problem of dimension {dim} exceeds the limit of {max}")]
    TooLarge { dim: usize, max: usize },
}
