use thiserror::Error;

/// Errors produced by the engine, the network, and the data pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty point cloud")]
    EmptyPointCloud,

    #[error("non-finite coordinate at point {index}")]
    NonFinitePoint { index: usize },

    #[error("point {index} lies at the sensor origin")]
    OriginPoint { index: usize },

    #[error("kernel size must be odd and >= 1, got {0}")]
    EvenKernel(u32),

    #[error("duplicate coordinate {0:?} in coordinate map")]
    DuplicateCoordinate(crate::sparse::Coordinate),

    #[error("channel mismatch: {context} expected {expected}, got {got}")]
    ChannelMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("shape mismatch: {context} expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("kernel map references row {row} out of range ({side} count {count})")]
    KernelMapOutOfRange {
        side: &'static str,
        row: usize,
        count: usize,
    },

    #[error("coordinate maps differ for {op}; binary ops require identical coordinates")]
    CoordinateMismatch { op: &'static str },

    #[error("no cached coordinate map for level {0}")]
    MissingCachedCoords(usize),

    #[error("loss value must be a scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("no supervised points")]
    NoSupervisedPoints,

    #[error("class {0} has zero frequency; exclude it or mark it ignored")]
    ZeroFrequency(usize),

    #[error("scan file size {bytes} bytes is not a multiple of 16")]
    BadScanSize { bytes: u64 },

    #[error("label count {labels} does not match point count {points}")]
    LabelCountMismatch { labels: usize, points: usize },

    #[error("unknown raw label id {0}")]
    UnknownRawLabel(u32),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
