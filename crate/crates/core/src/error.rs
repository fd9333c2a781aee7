use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),
    /// Inconsistent dimensions between a specification and its inputs.
    #[error("shape error: {0}")]
    Shape(String),
    /// An iterative method failed or produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A likelihood or prior term evaluated to a non-finite value.
    #[error("non-finite {term} term{}", subject.map(|s| format!(" for subject {s}")).unwrap_or_default())]
    NonFinite { subject: Option<usize>, term: &'static str },
    /// Invalid input files or configuration; one message per problem.
    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(vec![msg.into()])
    }

    /// True for failures caused by bad input rather than numerical trouble.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_) | Error::Shape(_) | Error::Domain(_) | Error::Io { .. })
    }
}
