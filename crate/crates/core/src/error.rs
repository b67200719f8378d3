use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("event slice is empty")]
    EmptySlice,

    /// The 8x8 plane-fit normal matrix lost rank.
    #[error("degenerate linear system: {0}")]
    DegenerateSystem(String),

    /// Too few background samples, or too little sign agreement, to trust a
    /// translation direction.
    #[error("insufficient support for translation estimate: {0}")]
    InsufficientSupport(String),

    #[error("malformed recording: {0}")]
    Format(String),

    #[error("unsupported recording version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("length mismatch: {left_name} has {left} entries but {right_name} has {right}")]
    LengthMismatch {
        left_name: &'static str,
        left: usize,
        right_name: &'static str,
        right: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn length_mismatch(
        left_name: &'static str,
        left: usize,
        right_name: &'static str,
        right: usize,
    ) -> Self {
        Error::LengthMismatch {
            left_name,
            left,
            right_name,
            right,
        }
    }
}
