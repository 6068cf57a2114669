use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or structural parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An operation was called on an input that violates its precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Inconsistent shapes or sequencing between components.
    #[error("logic error: {0}")]
    Logic(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The (alpha, gamma) pair falls outside the region where the discounted
    /// summation constant is defined.
    #[error("degenerate theory constants: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A run failed at a specific time index.
    #[error("run {run} failed at t={t}: {source}")]
    Run {
        run: usize,
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn logic(msg: impl Into<String>) -> Self {
        Error::Logic(msg.into())
    }

    /// Walks through [`Error::Run`] wrappers to the underlying failure.
    pub fn root(&self) -> &Error {
        match self {
            Error::Run { source, .. } => source.root(),
            other => other,
        }
    }
}
