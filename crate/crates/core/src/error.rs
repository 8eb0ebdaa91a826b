use alloc::string::String;
use core::fmt;

/// Errors raised by the grouping and tracking kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument violated a documented precondition.
    InvalidInput(String),
    /// Two operands disagree on shape.
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// A variable was used with a tape that did not record it.
    ForeignTape,
    /// Training produced a non-finite loss.
    Diverged { step: usize, loss: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::ShapeMismatch { expected, found } => write!(
                f,
                "shape mismatch: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::ForeignTape => f.write_str("variable belongs to a different tape"),
            Error::Diverged { step, loss } => {
                write!(f, "training diverged at step {step} (loss = {loss})")
            }
        }
    }
}

impl core::error::Error for Error {}
