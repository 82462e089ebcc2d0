use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed layout document: {0}")]
    Malformed(String),
    #[error("layout has no elements")]
    EmptyLayout,
    #[error("layout has {0} elements; at most {max} are supported", max = crate::layout::MAX_ELEMENTS)]
    TooManyElements(usize),
    #[error("element {id}: invalid bounding box (x1 <= x2 and y1 <= y2 required)")]
    InvalidBBox { id: String },
    #[error("element {id}: coordinate {value} lies outside the canvas")]
    OutOfCanvas { id: String, value: f64 },
    #[error("canvas dimensions must be positive, got {width}x{height}")]
    NonPositiveCanvas { width: f64, height: f64 },
    #[error("element {id}: {reason}")]
    InvalidElement { id: String, reason: String },
    #[error("duplicate element id {0}")]
    DuplicateId(String),
    #[error("unknown category {value:?} for {feature}")]
    UnknownCategory { feature: &'static str, value: String },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("softmax over a fully masked row")]
    FullyMaskedRow,
    #[error("loss must be a scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("odd encoding dimension {0}; sinusoidal encoding needs an even count")]
    OddDimension(usize),

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("ground truth does not match layout: {0}")]
    TruthMismatch(String),
    #[error("graph is disconnected")]
    DisconnectedGraph,
    #[error("association matrix has {matrix} elements, graph has {graph}")]
    ElementMismatch { matrix: usize, graph: usize },
    #[error("index {index} out of range (0..{len})")]
    OutOfRange { index: usize, len: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
