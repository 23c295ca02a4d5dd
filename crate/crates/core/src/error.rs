use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("missing or wrong header: expected `date,close`, found `{0}`")]
    BadHeader(String),
    #[error("duplicate date {0}")]
    DuplicateDate(String),
    #[error("line {line}: non-positive price {price}")]
    NonPositivePrice { line: usize, price: f64 },
    #[error("series too short: need at least {needed} rows, found {found}")]
    TooShort { needed: usize, found: usize },

    #[error("invalid training window: {0}")]
    InvalidWindow(String),
    #[error("training window too short: {found} days, need at least {needed}")]
    WindowTooShort { needed: usize, found: usize },
    #[error("empty test remainder after {0}")]
    EmptyTestRemainder(String),
    #[error("no test data after {0}")]
    NoTestData(String),
    #[error("test remainder too short: {found} days, need at least {needed}")]
    TestTooShort { needed: usize, found: usize },

    #[error("insufficient history: index {at} with horizon {horizon}")]
    InsufficientHistory { horizon: usize, at: usize },
    #[error("invalid horizons: {0}")]
    InvalidHorizons(String),
    #[error("zero-variance column `{0}`")]
    ZeroVarianceColumn(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid k={k}: {reason}")]
    InvalidK { k: usize, reason: String },
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("label {label} out of range for k={k}")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("state {state} has {members} member day(s), need at least 2")]
    SparseState { state: usize, members: usize },
    #[error("returns and features are not aligned: {0}")]
    Misaligned(String),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("empty sample")]
    EmptySample,
    #[error("constant sample: {0}")]
    ConstantSample(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no usable asset in {0}")]
    NoUsableAsset(PathBuf),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Tags an error with the pipeline stage that produced it.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
