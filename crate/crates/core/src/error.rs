use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("buffer of length {actual} cannot back a {rows}x{cols} tensor")]
    Length {
        rows: usize,
        cols: usize,
        actual: usize,
    },
    #[error("invalid bounds: lo ({lo}) must be strictly below hi ({hi})")]
    Bounds { lo: f64, hi: f64 },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("block range [{from}, {to}) invalid for a network of {len} blocks")]
    Range { from: usize, to: usize, len: usize },
    #[error("{blocks} blocks cannot be split into {stages} equal stages")]
    Partition { blocks: usize, stages: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {what} (epoch {epoch:?}, stage {stage:?})")]
    NonFinite {
        what: &'static str,
        epoch: Option<usize>,
        stage: Option<usize>,
    },
    #[error("stage {stage}: backward requested before forward")]
    MissingForward { stage: usize },
    #[error("stage {stage}: neighbour snapshot (lambda, kappa) unavailable")]
    MissingSnapshot { stage: usize },
    #[error("no cached boundary states; run a forward pass first")]
    NoBoundary,
    #[error("the auxiliary state of stage 0 is fixed to the network input")]
    FixedStage,
    #[error("stage {stage} worker failed: {reason}")]
    Worker { stage: usize, reason: String },
}
