use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors emitted by the engine, the zoo, the attacks, and the evaluators.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// An operation received tensors whose shapes do not satisfy its rule.
    ShapeMismatch { op: &'static str, detail: String },
    /// A parameter or configuration value violates a documented invariant.
    InvalidArg { op: &'static str, detail: String },
    /// An operation that requires data received none.
    EmptyInput { what: &'static str },
    /// `backward` was asked to differentiate a non-scalar value.
    NotScalarLoss { shape: Vec<usize> },
    /// A `ValueId` does not belong to the tape it was used with.
    UnknownValue,
    /// A class required by the one-per-class protocol is absent.
    MissingClasses { classes: Vec<usize> },
    /// Training produced a non-finite loss.
    TrainDiverged { epoch: usize, batch: usize },
    /// An evaluation protocol rule was broken (target/surrogate overlap,
    /// mismatched model sets, mismatched target lists).
    ProtocolViolation { detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, detail } => write!(f, "{op}: shape mismatch: {detail}"),
            Error::InvalidArg { op, detail } => write!(f, "{op}: invalid argument: {detail}"),
            Error::EmptyInput { what } => write!(f, "empty input: {what}"),
            Error::NotScalarLoss { shape } => {
                write!(f, "backward: loss must be scalar, got shape {shape:?}")
            }
            Error::UnknownValue => write!(f, "backward: value was not recorded on this tape"),
            Error::MissingClasses { classes } => {
                write!(f, "one-per-class sampling: missing classes {classes:?}")
            }
            Error::TrainDiverged { epoch, batch } => {
                write!(f, "training diverged: non-finite loss at epoch {epoch}, batch {batch}")
            }
            Error::ProtocolViolation { detail } => write!(f, "protocol violation: {detail}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
