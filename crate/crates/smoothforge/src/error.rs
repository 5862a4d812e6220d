use crate::formula::FormulaError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Formula(#[from] FormulaError),

    #[error("{0}")]
    Data(String),

    #[error("column `{column}` has too few distinct values: need at least {needed}, found {found}")]
    TooFewDistinct {
        column: String,
        needed: usize,
        found: usize,
    },

    #[error("smooth `{label}` is already centered; refusing to absorb the constraint twice")]
    AlreadyCentered { label: String },

    #[error("diagonalization needs a single-penalty smooth; `{label}` carries {count} penalties")]
    MultiPenaltyDiagonalize { label: String, count: usize },

    #[error("no rows remain after dropping rows with missing values")]
    EmptyData,

    #[error("family BINOMIAL requires a 0/1 response; found {value} at row {row}")]
    NonBinaryResponse { value: f64, row: usize },

    #[error("penalized normal equations are singular{context}")]
    Singular { context: String },

    #[error("model not internally sampleable: {reason}; use the emitted files with an external Gibbs sampler")]
    NotSampleable { reason: String },

    #[error("monitored node `{node}` is required {purpose} but is absent from the samples")]
    MissingMonitor { node: String, purpose: String },

    #[error("unknown term `{label}`")]
    UnknownTerm { label: String },

    #[error("samples do not match the prefit: {detail}")]
    SamplesSchema { detail: String },

    #[error("requested {requested} posterior draws but only {available} are stored")]
    NotEnoughDraws { requested: usize, available: usize },

    #[error("{file}: {detail}")]
    Format { file: String, detail: String },

    #[error("covariate `{name}` value {value} lies outside the training range [{lo}, {hi}]")]
    OutOfRange {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 0 ok, 2 user error, 3 I/O, 4 capability.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 3,
            Error::NotSampleable { .. } => 4,
            _ => 2,
        }
    }
}
