use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for subject {subject}: {what} has length {got}, expected {expected}")]
    SubjectDimension {
        subject: String,
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("dimension mismatch in {what}: got {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("singular design in {context} (condition number {condition:.3e})")]
    SingularDesign { context: String, condition: f64 },

    #[error("penalized normal equations are singular at lambda = {lambda} (condition number {condition:.3e})")]
    SingularPenalized { lambda: f64, condition: f64 },

    #[error("non-positive estimated variance {variance:e} for subject {subject}")]
    DegenerateVariance { subject: usize, variance: f64 },

    #[error("too few subjects: n = {n} with {params} parameters")]
    TooFewSubjects { n: usize, params: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bootstrap replicate {replicate} failed after {attempts} attempts: {source}")]
    Bootstrap {
        replicate: usize,
        attempts: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed report: {0}")]
    Report(String),
}

impl Error {
    pub(crate) fn at_stage(self, stage: usize) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Error {
        Error::InvalidArgument(msg.into())
    }
}
