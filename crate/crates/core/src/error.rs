//! Error type shared by every module of the crate.

use std::fmt;

pub type Result<T> = std::result::Result<T, TarnError>;

/// Errors emitted by the library.
#[derive(Debug, Clone, PartialEq)]
pub enum TarnError {
    /// Two operands (or an operand and a parameter) have incompatible shapes.
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// An operation precondition was violated (empty sequence, non-scalar loss, ...).
    Contract(String),
    /// A configuration is internally inconsistent or out of range.
    Config(String),
    /// A dataset does not satisfy the requirements of the requested episode spec.
    Data(String),
    /// A file could not be decoded; `offset` is the byte position of the defect.
    Load { offset: u64, reason: String },
    /// An I/O failure while reading or writing artifact files.
    Io(String),
    /// A numerical failure (NaN loss, gradcheck threshold exceeded).
    Numeric(String),
}

impl TarnError {
    pub fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        TarnError::Shape { op, lhs, rhs }
    }
}

impl fmt::Display for TarnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TarnError::Shape { op, lhs, rhs } => write!(
                f,
                "shape mismatch in {op}: {}x{} vs {}x{}",
                lhs.0, lhs.1, rhs.0, rhs.1
            ),
            TarnError::Contract(msg) => write!(f, "contract violation: {msg}"),
            TarnError::Config(msg) => write!(f, "invalid configuration: {msg}"),
            TarnError::Data(msg) => write!(f, "dataset error: {msg}"),
            TarnError::Load { offset, reason } => {
                write!(f, "load error at byte offset {offset}: {reason}")
            }
            TarnError::Io(msg) => write!(f, "i/o error: {msg}"),
            TarnError::Numeric(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl std::error::Error for TarnError {}

impl From<std::io::Error> for TarnError {
    fn from(e: std::io::Error) -> Self {
        TarnError::Io(e.to_string())
    }
}
