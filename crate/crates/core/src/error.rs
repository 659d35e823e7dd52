use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum SarError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("value outside its domain: {0}")]
    Domain(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite gradient at iteration {iteration}, coordinate {coordinate} ({name})")]
    NonFiniteGradient {
        iteration: usize,
        coordinate: usize,
        name: String,
    },

    #[error("non-finite log-likelihood for posterior draw {0}")]
    NonFiniteDraw(usize),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl SarError {
    /// True for failures caused by the numerics rather than the inputs' shape.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SarError::Singular(_) | SarError::NonFiniteGradient { .. } | SarError::NonFiniteDraw(_)
        )
    }

    pub(crate) fn mismatch(context: &'static str, expected: usize, found: usize) -> Self {
        SarError::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}

pub type Result<T> = std::result::Result<T, SarError>;
