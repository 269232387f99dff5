use thiserror::Error;

/// Errors raised by the analytic models, the trainer and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("feature {index} is zero; drop that coordinate and reduce the dimension")]
    ZeroFeature { index: usize },

    #[error("operation requires depth 2, got depth {0}")]
    UnsupportedDepth(u32),

    #[error("point is not on the interpolation manifold (loss {loss:e} > {tol:e})")]
    NotOnManifold { loss: f64, tol: f64 },

    #[error("normal direction undefined at w = 0")]
    ZeroWeights,

    #[error("point is not critical (riemannian gradient norm {0:e})")]
    NotCritical(f64),

    #[error("direction is not tangent (normal component {0:e})")]
    NotTangent(f64),

    #[error("optimal squared weights are negative at indices {indices:?}")]
    NonRealizableWeights { indices: Vec<usize> },

    #[error("second-moment matrix is not positive definite (smallest eigenvalue {0:e})")]
    SingularModel(f64),

    #[error("data model has no sampler")]
    MissingSampler,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("parameter count {count} exceeds the dense limit {limit}")]
    TooManyParameters { count: usize, limit: usize },

    #[error(
        "power iteration did not converge after {iterations} iterations (estimate {estimate}, residual {residual:e})"
    )]
    MaxIterExceeded {
        estimate: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("non-finite value encountered during {0}")]
    NumericalOverflow(&'static str),

    #[error("loss goal {0:e} was never reached")]
    GoalNotReached(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("record count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),

    #[error("length mismatch: header says {expected} values, payload has {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
