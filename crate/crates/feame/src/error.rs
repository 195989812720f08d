//! Error type shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by panel construction, estimation, and inference.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violates a documented precondition (bad window length,
    /// unsupported model/kind combination, malformed configuration, …).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// The data themselves are malformed (CSV schema violations, time gaps,
    /// out-of-range choices, empty panels, …).
    #[error("data error: {0}")]
    Data(String),

    /// The requested parameter is not identified from the given data
    /// (no informative equivalence classes, separation, singular systems).
    #[error("identification failure: {0}")]
    Identification(String),

    /// An iterative estimator exhausted its iteration budget.
    #[error("did not converge: {0}")]
    NonConvergence(String),

    /// A numerical operation failed (non-finite values, failed solve).
    #[error("computation failed: {0}")]
    Computation(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Convenience constructor for [`Error::Invalid`].
    pub fn invalid(msg: String) -> Self {
        Error::Invalid(msg)
    }

    /// Convenience constructor for [`Error::Data`].
    pub fn data(msg: String) -> Self {
        Error::Data(msg)
    }

    /// Convenience constructor for [`Error::Identification`].
    pub fn identification(msg: String) -> Self {
        Error::Identification(msg)
    }

    /// Convenience constructor for [`Error::NonConvergence`].
    pub fn non_convergence(msg: String) -> Self {
        Error::NonConvergence(msg)
    }

    /// Convenience constructor for [`Error::Computation`].
    pub fn computation(msg: String) -> Self {
        Error::Computation(msg)
    }
}
