use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {shapes}")]
    Shape { op: &'static str, shapes: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("graph builder is not deterministic: repeated evaluation gave {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("unknown edge {0}")]
    UnknownEdge(String),

    #[error("unknown genotype {0}")]
    UnknownGenotype(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("degenerate teacher: class {class} holds {fraction:.3} of samples after {attempts} draws")]
    DegenerateTeacher {
        class: usize,
        fraction: f64,
        attempts: usize,
    },

    #[error("batch size {batch} exceeds split size {split}")]
    BatchTooLarge { batch: usize, split: usize },

    #[error("theorem violation: {0}")]
    TheoremViolation(String),

    #[error("probe refused: {0}")]
    ProbeRefused(String),

    #[error("parameter snapshot changed between paired passes")]
    SnapshotMismatch,

    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("table incomplete: {have} of {want} entries")]
    IncompleteTable { have: usize, want: usize },

    #[error("too many genotypes: {0} exceeds the enumeration limit")]
    EnumerationOverflow(u128),

    #[error("empty trace")]
    EmptyTrace,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, shapes: impl Into<String>) -> Self {
        Error::Shape {
            op,
            shapes: shapes.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
