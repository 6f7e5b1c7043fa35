use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("resource space mismatch: expected {expected} dimensions, found {found}")]
    SpaceMismatch { expected: usize, found: usize },

    #[error("invalid resource space: {0}")]
    InvalidSpace(String),

    #[error("invalid resource vector: {0}")]
    InvalidVector(String),

    #[error("invalid bucket catalog: {0}")]
    InvalidCatalog(String),

    #[error("job {job} fits no bucket in the catalog")]
    UnpackableJob { job: String },

    #[error("tick {tick}: job {job} fits no bucket in the catalog")]
    UnpackableAtTick { tick: usize, job: String },

    #[error("line {line}, column {column}: {reason}")]
    Parse {
        line: usize,
        column: usize,
        reason: String,
    },

    #[error("job {job_id}: {reason}")]
    InvalidJob { job_id: String, reason: String },

    #[error("series file: {0}")]
    SeriesFormat(String),

    #[error("series row {row}: {reason}")]
    SeriesRow { row: usize, reason: String },

    #[error("series too short: {rows} rows, need at least {needed}")]
    SeriesTooShort { rows: usize, needed: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite training loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("no placement group can hold virtual instance {0}")]
    Capacity(String),

    #[error("insufficient history: need {needed} rows before the evaluation range, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("cannot compare reports: {0}")]
    MismatchedReports(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
