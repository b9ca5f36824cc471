//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // --- data ingestion / schema ---
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{file}, row {row}: missing value for `{column}`")]
    MissingValue { file: String, row: usize, column: String },
    #[error("{file}, row {row}: unknown level `{level}` for variable `{variable}`")]
    UnknownCategoryLevel { file: String, row: usize, variable: String, level: String },
    #[error("{file}, row {row}: bad value `{value}` for `{column}`: {reason}")]
    BadValue { file: String, row: usize, column: String, value: String, reason: String },
    #[error("falls file, row {row}: fall event references unknown patient `{patient_id}`")]
    OrphanFallEvent { row: usize, patient_id: String },
    #[error("patient `{patient_id}`: fell flag is {flag} but {n_falls} fall(s) recorded")]
    InconsistentFellFlag { patient_id: String, flag: u8, n_falls: usize },
    #[error(
        "falls file, row {row}: clock time {minutes} min buckets to {expected}, file says {actual}"
    )]
    InconsistentFallTime { row: usize, minutes: u32, expected: String, actual: String },
    #[error("duplicate patient id `{0}`")]
    DuplicatePatient(String),
    #[error("patient `{patient_id}`: fall indices are not contiguous from 1")]
    NonContiguousFallIndex { patient_id: String },
    #[error("clock time {0} min is outside 0..=1439")]
    OutOfRange(u32),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // --- design construction ---
    #[error("variable `{0}` is not declared in the schema")]
    UnknownVariable(String),
    #[error("variable `{variable}` is {availability}-only and cannot enter a stage-{stage} design")]
    StageMismatch { variable: String, availability: String, stage: u8 },

    // --- numeric kernels / fitting ---
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("sigma2 must be positive, got {0}")]
    NonpositiveSigma2(f64),
    #[error("Hessian factorization failed: {0}")]
    SingularHessian(String),
    #[error("objective is non-finite: {0}")]
    NonFiniteObjective(String),
    #[error("sigma2 grid degenerate: {0}")]
    GridDegenerate(String),
    #[error("fit did not converge")]
    NotConverged,

    // --- selection / averaging ---
    #[error("no candidate model could be fit in the first selection step")]
    AllCandidatesFailed,
    #[error("ensemble has no successfully fitted member")]
    EmptyEnsemble,
    #[error("literal lml-ratio weights need all-negative lml values; got {0}")]
    LiteralWeightsUndefined(String),

    // --- prediction / evaluation ---
    #[error("patient `{0}` has no random intercept in this fit")]
    UnknownPatient(String),
    #[error("labels contain a single class")]
    SingleClass,

    // --- oracles ---
    #[error("integration bounds too narrow: {0}")]
    BoundsTooNarrow(String),
    #[error("quadrature supports at most 3 dimensions, got {0}")]
    DimensionTooLarge(usize),
    #[error("effective sample size {0:.1} is below 100")]
    EffectiveSampleTooSmall(f64),
    #[error("degenerate importance proposal: {0}")]
    DegenerateProposal(String),

    // --- wrapped ---
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by malformed input data or configuration,
    /// as opposed to numeric failures. The CLI maps these to exit code 2
    /// and everything else to exit code 3.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn { .. }
                | Error::MissingValue { .. }
                | Error::UnknownCategoryLevel { .. }
                | Error::BadValue { .. }
                | Error::OrphanFallEvent { .. }
                | Error::InconsistentFellFlag { .. }
                | Error::InconsistentFallTime { .. }
                | Error::DuplicatePatient(_)
                | Error::NonContiguousFallIndex { .. }
                | Error::OutOfRange(_)
                | Error::InvalidSchema(_)
                | Error::InvalidConfig(_)
                | Error::UnknownVariable(_)
                | Error::StageMismatch { .. }
                | Error::Csv(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
