use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at data row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("duplicate trace (subject {subject}, replicate {replicate})")]
    Duplicate { subject: String, replicate: String },
    #[error("cannot normalize trace {index} (subject {subject}, replicate {replicate}): no positive feature")]
    Normalization {
        index: usize,
        subject: String,
        replicate: String,
    },
    #[error("matrix mode error: {0}")]
    Mode(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("repeatability diagnostic error: {0}")]
    Diagnostic(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("pair set does not belong to this matrix (fingerprint {expected:016x} != {got:016x})")]
    StalePairSet { expected: u64, got: u64 },
    #[error("distance error for pair ({i}, {j}): {source}")]
    PairDistance {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("memory budget exceeded: need {needed} bytes, budget {budget}")]
    MemoryBudget { needed: usize, budget: usize },
    #[error("fit error: {0}")]
    Fit(String),
    #[error("degenerate mixture fit: {0}")]
    DegenerateFit(String),
    #[error("likelihood ratio indeterminate at d = {0}: both densities underflow")]
    IndeterminateLr(f64),
    #[error("statistical test error: {0}")]
    Test(String),
    #[error("cross-validation error: {0}")]
    Cv(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("leakage: {0} subject(s) present in both calibration and test sets")]
    Leakage(usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported schema version {found} (this build reads version {supported})")]
    Version { found: u64, supported: u32 },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
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
