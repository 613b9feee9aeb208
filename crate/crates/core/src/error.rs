use thiserror::Error;

use crate::panel::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("term `{term}` references a value not yet available when modelling `{target}` at time {time}")]
    FutureReference {
        term: String,
        target: String,
        time: usize,
    },

    #[error("time {time} is beyond the panel horizon {horizon}")]
    TimeOutOfRange { time: usize, horizon: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no observations available for {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("panel failed validation with {} violation(s); first: {}", .0.len(), .0[0])]
    InvalidPanel(Vec<Violation>),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("exact standardization needs {paths} covariate paths per subject (limit {limit})")]
    PathGuard { paths: f64, limit: usize },

    #[error("exact standardization requires binary modelled covariates; `{0}` is real-valued")]
    ContinuousCovariate(String),

    #[error("log-posterior is not finite at the initial point")]
    NonFiniteInitial,

    #[error("non-finite prior density for parameter {0}")]
    NonFinitePrior(usize),

    #[error("only {usable} usable bootstrap resamples (need at least 2)")]
    TooFewResamples { usable: usize },

    #[error("replicate {replicate} failed: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
