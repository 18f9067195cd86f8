use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input dimension has zero range, so it cannot be scaled.
    #[error("input dimension {dim} is constant")]
    DegenerateDimension { dim: usize },

    /// A correlation matrix stayed indefinite after the full jitter schedule.
    #[error("factorization failed{}: {reason}", .point.map(|i| format!(" at ordered point {i}")).unwrap_or_default())]
    Conditioning { point: Option<usize>, reason: String },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("trend basis is rank deficient: {0}")]
    Rank(String),

    #[error("fit failed: {0}")]
    Fit(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for failures caused by floating point conditioning rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Conditioning { .. } | Error::DegenerateData(_) | Error::Rank(_) | Error::Fit(_)
        )
    }
}
