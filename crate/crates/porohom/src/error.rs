use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("regularization margin {delta} exceeds the minimal Greville spacing {min_spacing}")]
    InfeasibleReference { delta: f64, min_spacing: f64 },

    #[error("mesh generation failed: {0}")]
    MeshGeneration(String),

    #[error("element {element} has nonpositive Jacobian (min det {det:.3e})")]
    TangledElement { element: usize, det: f64 },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("infeasible starting point: {0}")]
    InfeasibleStart(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
