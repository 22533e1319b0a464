use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty level")]
    EmptyLevel,

    #[error("invalid level size {width}x{height}: width must be in [4,9] and height in [4,11]")]
    InvalidSize { width: usize, height: usize },

    #[error("malformed level: {0}")]
    MalformedLevel(String),

    #[error("illegal swap: {0}")]
    IllegalSwap(String),

    #[error("no match produced")]
    NoMatchProduced,

    #[error("deadlock")]
    Deadlock,

    #[error("generator starved after {0} attempts")]
    GeneratorStarved(usize),

    #[error("degenerate difficulty range")]
    DegenerateDifficultyRange,

    #[error("difficulty out of range: {value} not in [{min}, {max}]")]
    DifficultyOutOfRange { value: f64, min: f64, max: f64 },

    #[error("model variant mismatch: {0}")]
    VariantMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty mask")]
    EmptyMask,

    #[error("non-finite loss at epoch {epoch} (ce={ce}, kl={kl})")]
    NonFiniteLoss { epoch: usize, ce: f64, kl: f64 },

    #[error("insufficient training coverage")]
    InsufficientCoverage,

    #[error("dataset has no {0} levels")]
    EmptySplit(&'static str),

    #[error("parse error at record {index}: {message}")]
    Record { index: usize, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
