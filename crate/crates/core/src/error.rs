use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("feature dimension {dim} is smaller than the number of classes {classes}")]
    DimensionTooSmall { dim: usize, classes: usize },

    #[error("an ETF needs at least two classes, got {0}")]
    TooFewClasses(usize),

    #[error("random rotation stayed rank-deficient after {attempts} attempts")]
    DegenerateRotation { attempts: u32 },

    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("vector norm {norm} violates the unit-norm precondition")]
    NotNormalized { norm: f64 },

    #[error("vector norm {norm} is too small to normalize")]
    VanishingNorm { norm: f64 },

    #[error("loss became non-finite at step {step}")]
    Divergence { step: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("centered class mean of class {0} vanishes")]
    DegenerateMean(usize),

    #[error("between-class scatter vanishes (trace {0})")]
    DegenerateBetween(f64),

    #[error("attempted to update frozen backbone parameters")]
    FrozenViolation,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
