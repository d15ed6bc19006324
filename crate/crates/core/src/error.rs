use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid tensor shape {shape:?} for {len} values")]
    Shape { shape: Vec<usize>, len: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} at index {index} is out of range for {classes} classes")]
    Label {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("backward called on {0} before forward")]
    BackwardBeforeForward(&'static str),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("distribution error: {0}")]
    Distribution(String),

    #[error("sequence of length {len} exceeds {max} position embeddings")]
    SequenceLength { len: usize, max: usize },

    #[error("teacher and student are incompatible: {0}")]
    Compatibility(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("cannot balance dataset: {0}")]
    Balance(String),

    #[error("cannot split dataset: {0}")]
    Split(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty batch: {0}")]
    EmptyBatch(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Failures reading or writing the binary checkpoint format.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}, not a checkpoint file")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("{0} trailing bytes after checkpoint payload")]
    TrailingBytes(usize),

    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),

    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}
