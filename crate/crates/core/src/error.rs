use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive semi-definite (factorization failed with jitter {jitter:e})")]
    NotPsd { jitter: f64 },

    #[error("eigenvalue iteration did not converge within {iterations} sweeps")]
    NonConvergence { iterations: usize },

    #[error("vectorized linear system is numerically singular")]
    SingularSystem,

    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("gain is not stabilizing: spectral radius of A - BK is {radius}")]
    UnstableGain { radius: f64 },

    #[error("Riccati iteration did not converge after {iterations} iterations (last relative step {last_step:e})")]
    RiccatiNonConvergence { iterations: usize, last_step: f64 },

    #[error("Riccati solution gives a non-stabilizing gain: spectral radius {radius}")]
    UnstableClosedLoop { radius: f64 },

    #[error("critic parameter is not symmetric (asymmetry {asymmetry:e})")]
    AsymmetricTheta { asymmetry: f64 },

    #[error("state norm {norm:e} exceeded the blow-up guard {guard:e}")]
    StateBlowup { norm: f64, guard: f64 },

    #[error("closed-loop spectral radius {radius} reached the guard {guard} at iteration {iteration}")]
    AssumptionViolated {
        iteration: usize,
        radius: f64,
        guard: f64,
    },

    #[error("constant `{0}` must be positive")]
    NonPositiveConstant(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
