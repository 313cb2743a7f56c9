//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation angle too close to pi (trace = {trace})")]
    AngleNearPi { trace: f64 },
    #[error("degenerate 6d rotation input: embedded vectors parallel or near zero")]
    DegenerateSixD,
    #[error("degenerate rotation mean: smallest singular value {sigma_min} below threshold")]
    DegenerateMean { sigma_min: f64 },
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("covariance is singular: scale entry {0} below threshold")]
    SingularCovariance(f64),
    #[error("need more than {k} gaussians for k = {k} neighbors, have {n}")]
    TooFewGaussians { n: usize, k: usize },
    #[error("point cloud is empty")]
    EmptyPointCloud,
    #[error("skeleton frame has no vertices")]
    EmptySkeleton,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("tape does not match network topology")]
    TapeMismatch,
    #[error("shape mismatch: params {params}, grads {grads}")]
    ShapeMismatch { params: usize, grads: usize },
    #[error("phase {attempted:?} cannot run after {completed:?}")]
    PhaseOrderViolation {
        completed: &'static str,
        attempted: &'static str,
    },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("container checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("unsupported container version: {0}")]
    VersionMismatch(String),
    #[error("malformed container: {0}")]
    MalformedContainer(String),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code per the CLI contract: 1 for domain errors, 2 for i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::IoFailure { .. } => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}
