use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument violated an operation's precondition.
    Argument(String),
    /// Two operands disagree in shape.
    Shape {
        op: &'static str,
        expected: String,
        found: String,
    },
    /// An index is outside `0..len`.
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },
    /// A value was NaN or infinite where finite input is required.
    NonFinite(&'static str),
    /// Training produced a non-finite loss.
    Diverged { iteration: usize, identity: usize },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn shape(
        op: &'static str,
        expected: impl fmt::Debug,
        found: impl fmt::Debug,
    ) -> Self {
        Error::Shape {
            op,
            expected: alloc::format!("{expected:?}"),
            found: alloc::format!("{found:?}"),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Argument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Shape {
                op,
                expected,
                found,
            } => {
                write!(
                    f,
                    "{op}: shape mismatch, expected {expected}, found {found}"
                )
            }
            Error::Index { what, index, len } => {
                write!(f, "{what} index {index} out of range (len {len})")
            }
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Diverged {
                iteration,
                identity,
            } => {
                write!(
                    f,
                    "loss became non-finite at iteration {iteration} (identity {identity})"
                )
            }
        }
    }
}

impl core::error::Error for Error {}
