use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh needs at least one element per side (got n = {0})")]
    InvalidMeshSize(usize),

    #[error("macro partition requires even n (got n = {0})")]
    OddMacroPartition(usize),

    #[error("({0}, {1}) is not the index of a macro element")]
    InvalidMacroIndex(usize, usize),

    #[error("theta order must be 1 or 2 (got {0})")]
    InvalidThetaOrder(u32),

    #[error("Gauss rule needs 1..=16 points per axis (got {0})")]
    QuadratureOrder(usize),

    #[error("unknown space kind `{0}`")]
    UnknownSpaceKind(String),

    #[error("unknown element pair `{0}`")]
    UnknownPair(String),

    #[error("operation needs a {expected} space, got {found}")]
    SpaceKindMismatch {
        expected: &'static str,
        found: String,
    },

    #[error("spaces live on different meshes (n = {0} vs n = {1})")]
    MeshMismatch(usize, usize),

    #[error("reduced pressure space needs n >= 2 (got n = {0})")]
    ReducedPressureTooSmall(usize),

    #[error("viscosity must be positive (got {0})")]
    InvalidViscosity(f64),

    #[error("matrix is not positive definite: pivot {index} = {pivot:e}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error(
        "saddle-point system is singular (curvature {curvature:e} along a pressure direction)"
    )]
    Singular { curvature: f64, near_null: Vec<f64> },

    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("constrained pressure space is empty")]
    EmptyConstrainedSpace,

    #[error("forcing data mismatch: {0}")]
    ForcingMismatch(String),

    #[error("invalid level list: {0}")]
    InvalidLevels(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
