//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while building or running an experiment.
#[derive(Debug, Error)]
pub enum SfdaError {
    #[error("shape mismatch: {context} (expected {expected}, got {got})")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("backward requires a scalar loss node, got a {rows}x{cols} value")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("backward was already run on this recording")]
    BackwardTwice,

    #[error("gradient check produced a non-finite value at parameter {param}, coordinate {coord}")]
    NonFiniteCheck { param: usize, coord: usize },

    #[error("non-finite {loss_name} loss during {phase} (epoch {epoch}, batch {batch})")]
    NonFiniteLoss {
        phase: &'static str,
        epoch: usize,
        batch: usize,
        loss_name: &'static str,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("instance too large: {actual} tuples exceeds the enumeration bound {bound}")]
    EnumerationTooLarge { actual: u128, bound: u128 },

    #[error("dataset has no labels: {0}")]
    MissingLabels(String),

    #[error("empty selection record")]
    EmptySelectionRecord,

    #[error("IDX magic mismatch: expected {expected:#010x}, found {found:#010x}")]
    IdxWrongMagic { expected: u32, found: u32 },

    #[error("IDX payload truncated: needed {needed} bytes, found {found}")]
    IdxTruncated { needed: usize, found: usize },

    #[error("IDX image/label count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("checkpoint version mismatch: expected {expected:?}, found {found:?}")]
    CheckpointVersion { expected: String, found: String },

    #[error("checkpoint shape mismatch for {name}: manifest says {manifest}, model needs {model}")]
    CheckpointShape {
        name: String,
        manifest: String,
        model: String,
    },

    #[error("checkpoint payload truncated: needed {needed} bytes, found {found}")]
    CheckpointTruncated { needed: usize, found: usize },

    #[error("malformed checkpoint: {0}")]
    CheckpointMalformed(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SfdaError {
    /// Wrap an I/O error with the path it occurred on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SfdaError::Io {
            path: path.into(),
            source,
        }
    }
}
