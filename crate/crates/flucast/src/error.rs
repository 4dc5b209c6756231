use thiserror::Error;

/// Errors across the pipeline: ingestion, feature construction, training,
/// evaluation, and serialization.
#[derive(Debug, Error)]
pub enum FlucastError {
    #[error("invalid week {week} for year {year}")]
    InvalidWeek { year: i32, week: u32 },

    #[error("unparseable week string: {0:?} (expected YYYY-Www)")]
    InvalidWeekString(String),

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("duplicate cell for country {country:?} week {week}")]
    DuplicateCell { country: String, week: String },

    #[error("panel has no valid rows")]
    EmptyPanel,

    #[error("slice range [{from}, {to}] outside panel span [{start}, {end}]")]
    RangeOutOfBounds { from: String, to: String, start: String, end: String },

    #[error("format version mismatch: expected {expected:?}, found {found:?}")]
    FormatVersionMismatch { expected: String, found: String },

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error("unknown country: {0:?}")]
    UnknownCountry(String),

    #[error("insufficient history: need {needed} weeks, panel has {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("missing data in scope for country {0:?}")]
    MissingDataInScope(String),

    #[error("dimension mismatch: expected {expected} columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite input value")]
    NonFiniteInput,

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    DivergedTraining { epoch: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("missing feature column: {0:?}")]
    MissingFeatureColumn(String),

    #[error("feature schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("all points skipped by zero policy")]
    AllPointsSkipped,

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("horizon {horizon}: {source}")]
    HorizonFit { horizon: u32, source: Box<FlucastError> },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FlucastError>;
