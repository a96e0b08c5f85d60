use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input: schema, coding, missing values, preconditions.
    Validation,
    /// A fit or estimate failed numerically.
    Numerical,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("column length mismatch: column {column:?} has {found} rows, expected {expected}")]
    LengthMismatch {
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("dataset has no rows")]
    Empty,
    #[error("treatment not coded 0/1 (row {row}: {value:?})")]
    TreatmentNotBinary { row: usize, value: String },
    #[error("outcome not coded 0/1 for a binomial outcome model (row {row}: {value})")]
    OutcomeNotBinary { row: usize, value: f64 },
    #[error("missing value in column {column:?} at row {row}")]
    MissingValue { column: String, row: usize },
    #[error("invalid number {value:?} in column {column:?} at row {row}")]
    InvalidNumber {
        column: String,
        row: usize,
        value: String,
    },
    #[error("missing column role: {0}")]
    MissingRole(String),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("column {0:?} is assigned more than one role")]
    DuplicateRole(String),
    #[error("effect modifier {0:?} must not also be listed among the covariates")]
    EffectModifierInCovariates(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("unseen level {level:?} in column {column:?}")]
    UnseenLevel { column: String, level: String },
    #[error("constant design: a penalized learner needs at least one non-constant covariate")]
    ConstantDesign,
    #[error("perfect separation detected (|coefficient| > 30)")]
    Separation,
    #[error("{solver} did not converge within {iterations} iterations")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
    },
    #[error("rank-deficient design")]
    RankDeficient,
    #[error("non-finite loss during network training")]
    NonFiniteLoss,
    #[error("class {0} absent from the training labels")]
    MissingClass(usize),
    #[error("invalid learner specification: {0}")]
    InvalidSpec(String),
    #[error("all candidate learners failed: {0}")]
    AllCandidatesFailed(String),
    #[error("empty arm: no training rows with A={0}")]
    EmptyArm(u8),
    #[error("source {0:?} absent from the training rows")]
    MissingSource(String),
    #[error("source {0:?} has a single treatment arm in the training rows")]
    SingleArmSource(String),
    #[error("no external rows in the training data")]
    NoExternalRows,
    #[error("empty target cell: {0}")]
    EmptyTargetCell(String),
    #[error(
        "stratum {stratum:?} has {size} rows, fewer than the {folds} folds required; \
         consider disabling cross-fitting"
    )]
    StratumTooSmall {
        stratum: String,
        size: usize,
        folds: usize,
    },
    #[error("arm estimates refer to different targets")]
    TargetMismatch,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("replication {replication}, split {split}: {source}")]
    InSplit {
        replication: usize,
        split: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::ConstantDesign
            | Error::Separation
            | Error::NoConvergence { .. }
            | Error::RankDeficient
            | Error::NonFiniteLoss
            | Error::AllCandidatesFailed(_) => ErrorKind::Numerical,
            Error::InSplit { source, .. } => source.kind(),
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn in_split(self, replication: usize, split: usize) -> Error {
        Error::InSplit {
            replication,
            split,
            source: Box::new(self),
        }
    }
}
