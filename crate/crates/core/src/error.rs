use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRot6d(String),
    #[error("not a rotation matrix: {0}")]
    NotARotation(String),
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invariant violated at `{path}`: {message}")]
    Invariant { path: String, message: String },
    #[error("point {0} is behind the camera")]
    BehindCamera(usize),
    #[error("too few usable keypoints: {0}")]
    TooFewKeypoints(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("infeasible start: {0}")]
    InfeasibleStart(String),
    #[error("face {0} of the reference mesh has zero area")]
    DegenerateFace(usize),
    #[error("gradient check failed: relative error {rel_error:e} exceeds {tolerance:e}")]
    GradientCheck { rel_error: f64, tolerance: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invariant(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invariant {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn mismatch(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            got,
        }
    }
}
