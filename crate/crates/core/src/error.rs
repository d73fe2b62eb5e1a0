use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("component {0} has zero variance")]
    DegenerateComponent(&'static str),

    #[error("normalization stats do not match the requested components")]
    StatsMismatch,

    #[error("class {label:?} has {count} samples, needs at least {needed}")]
    InsufficientClass {
        label: String,
        count: usize,
        needed: usize,
    },

    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),

    #[error("word length {length} outside {min}..={max}")]
    InvalidLength { length: usize, min: usize, max: usize },

    #[error("invalid canvas {width}x{height}")]
    InvalidCanvas { width: usize, height: usize },

    #[error("image has no ink")]
    BlankImage,

    #[error("no unvisited start candidates remain")]
    Exhausted,

    #[error("start pixel ({0}, {1}) is already visited")]
    InvalidStart(usize, usize),

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("cross-entropy error must be non-negative, got {0}")]
    InvalidError(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported model version {0}")]
    UnknownVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from configuration rather than data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidFractions(_) | Error::InvalidLength { .. } | Error::InvalidCanvas { .. }
        )
    }
}
