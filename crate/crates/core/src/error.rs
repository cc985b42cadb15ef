use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid subject labels: {0}")]
    BadLabels(String),
    #[error("subject `{0}` has no observed values")]
    EmptyRow(String),
    #[error("need at least {needed} features, found {found}")]
    TooFewFeatures { needed: usize, found: usize },
    #[error("feature `{0}` has fewer than two observed values")]
    TooFewObservations(String),
    #[error("missing value for subject `{subject}`, feature `{feature}`")]
    MissingData { subject: String, feature: String },
    #[error("matrix is not symmetric at ({row}, {col}): relative asymmetry {rel:e}")]
    Asymmetric { row: String, col: String, rel: f64 },
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: String, col: String, value: f64 },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: String, col: String },
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("subject lists differ: {0}")]
    SubjectMismatch(String),
    #[error("structure matrix is rank deficient (condition number {cond:e})")]
    RankDeficient { cond: f64 },
    #[error("decomposition failed: {0}")]
    DecompositionFailure(String),
    #[error("columns are not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("subject `{0}` has no cluster assignment")]
    UnassignedSubject(String),
    #[error("empty selection: {0}")]
    EmptySelection(String),
    #[error("no tip is at least the median distance from recipient {0}")]
    NoEligibleDonor(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. } | Error::DecompositionFailure(_) | Error::DegenerateInput(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
