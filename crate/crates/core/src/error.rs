use thiserror::Error;

use crate::lmm::LmmFit;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error classes; each maps onto one CLI exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Usage => "usage",
            ErrorClass::Data => "data",
            ErrorClass::Numerical => "numerical",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset needs at least 2 groups, found {found}")]
    InsufficientGroups { found: usize },

    #[error("group '{group}': {detail}")]
    DimensionMismatch { group: String, detail: String },

    #[error("group '{group}': non-finite value in {field} at row {row}, column {col}")]
    NonFinite {
        group: String,
        field: &'static str,
        row: usize,
        col: usize,
    },

    #[error("duplicate group id '{0}'")]
    DuplicateGroupId(String),

    #[error("learner needs at least 2 training rows, got {rows}")]
    DegenerateTarget { rows: usize },

    #[error("singular GLS design: rank {rank} < {dim} (collinear residualized covariates or too few observations)")]
    SingularDesign { rank: usize, dim: usize },

    #[error("too few observations for the mixed-model fit: {rows} rows, need at least {needed}")]
    TooFewObservations { rows: usize, needed: usize },

    #[error("variance-component optimization did not converge after {iterations} iterations (score norm {score_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        score_norm: f64,
        best: Box<LmmFit>,
    },

    #[error("internal numerical failure: {0}")]
    Numerical(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("all {repetitions} repetitions failed; first failure: {first}")]
    AllRepetitionsFailed {
        repetitions: usize,
        first: Box<Error>,
    },

    #[error("no split estimates to aggregate")]
    EmptyEstimates,

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("unknown column '{0}'")]
    UnknownColumn(String),

    #[error("line {line}, column '{column}': cannot parse '{value}' as a number")]
    NonNumeric {
        line: u64,
        column: String,
        value: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) => ErrorClass::Usage,
            Error::InsufficientGroups { .. }
            | Error::DimensionMismatch { .. }
            | Error::NonFinite { .. }
            | Error::DuplicateGroupId(_)
            | Error::DegenerateTarget { .. }
            | Error::TooFewObservations { .. }
            | Error::Parse { .. }
            | Error::UnknownColumn(_)
            | Error::NonNumeric { .. }
            | Error::Io(_) => ErrorClass::Data,
            Error::SingularDesign { .. }
            | Error::NonConvergence { .. }
            | Error::Numerical(_)
            | Error::EmptyEstimates => ErrorClass::Numerical,
            Error::Fold { source, .. } => source.class(),
            Error::AllRepetitionsFailed { first, .. } => first.class(),
        }
    }

    pub(crate) fn in_fold(self, fold: usize) -> Error {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }
}
