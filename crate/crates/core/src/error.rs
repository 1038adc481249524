use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("correspondence set is empty")]
    EmptyCorrespondences,
    #[error("need at least {required} correspondences, got {got}")]
    TooFewCorrespondences { required: usize, got: usize },
    #[error("bearing vector is not unit length (norm {0})")]
    NotUnit(f64),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("matrix is not a rotation: {0}")]
    NotARotation(String),
    #[error("cannot project the zero matrix onto the essential manifold")]
    ZeroMatrix,
    #[error("sphere retraction hit an antipodal step")]
    AntipodalStep,
    #[error("data matrix is zero")]
    ZeroDataMatrix,
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("constraint Jacobian is rank deficient for the relaxation dropping h{dropped}")]
    RankDeficientJacobian { dropped: usize },
    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("Hessian of the Lagrangian couples the E and t blocks (entry {0:e})")]
    CoupledLagrangian(f64),
    #[error("weight {0} outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("scene generation exhausted its retry budget")]
    SceneGeneration,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
