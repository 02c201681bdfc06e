use thiserror::Error;

/// Errors shared by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown pattern `{0}`")]
    UnknownPattern(String),

    #[error("unknown animation `{0}`")]
    UnknownAnimation(String),

    #[error("pattern does not fit grid: {0}")]
    PatternTooLarge(String),

    #[error("index out of bounds: {what} = {got}, limit {limit}")]
    OutOfBounds {
        what: &'static str,
        got: usize,
        limit: usize,
    },

    #[error("grid mismatch: scene is {scene_rows}x{scene_cols}, config is {cfg_rows}x{cfg_cols}")]
    GridMismatch {
        scene_rows: usize,
        scene_cols: usize,
        cfg_rows: usize,
        cfg_cols: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("incompatible shapes: {left} vs {right} ({context})")]
    ShapeMismatch {
        left: String,
        right: String,
        context: &'static str,
    },

    #[error("source distance must exceed scatterer height (D = {distance_mm} mm, h = {height_mm} mm)")]
    SourceBehindScatterer { distance_mm: f64, height_mm: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("undefined correlation: input is constant")]
    ConstantInput,

    #[error("degenerate histogram: all values equal")]
    DegenerateHistogram,

    #[error("mask excludes every pixel")]
    MaskCoversSensor,

    #[error("mask rectangle out of sensor bounds: {0}")]
    MaskOutOfBounds(String),

    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),

    #[error("empty alpha grid")]
    EmptyGrid,

    #[error("calibration stack is empty")]
    EmptyStack,

    #[error("stack distances must be strictly increasing")]
    UnsortedStack,

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    BadVersion(u8),

    #[error("truncated file: expected {expected} bytes of payload, got {got}")]
    Truncated { expected: usize, got: usize },

    #[error("malformed {format} file: {reason}")]
    MalformedFile {
        format: &'static str,
        reason: String,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
