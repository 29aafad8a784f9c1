//! Error type shared by every module of the core crate.

use core::fmt;

/// Failure of a precondition. `field`/`what` strings name the offending input so front ends can
/// map them onto document paths.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A grid parameter is out of range or not commensurate with `dt`.
    Grid { field: &'static str, reason: &'static str },
    /// Two paths live on different grids.
    GridMismatch,
    /// A time that must be a grid node is not one (or lies outside `[0, T]`).
    NotANode { what: &'static str, value: f64 },
    /// A time argument is ordered the wrong way round.
    TimeOrder { what: &'static str },
    /// A sequence has the wrong length.
    Length { what: &'static str, expected: usize, got: usize },
    /// The point is terminal (`t = T`) where an interior point is required.
    Terminal,
    /// An input collection is empty.
    Empty(&'static str),
    /// An enumeration would exceed its budget.
    Budget { needed: u128, budget: u128 },
    /// A functional lacks the regularity tag an operation is licensed for.
    MissingTag(&'static str),
    /// A numeric precondition estimate failed; the value is the estimate.
    Precondition { what: &'static str, estimate: f64 },
    /// Any other malformed argument.
    Argument(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Grid { field, reason } => write!(f, "invalid grid field `{field}`: {reason}"),
            Error::GridMismatch => write!(f, "paths are defined on different grids"),
            Error::NotANode { what, value } => write!(f, "{what} = {value} is not a grid node"),
            Error::TimeOrder { what } => write!(f, "time order violated: {what}"),
            Error::Length { what, expected, got } => {
                write!(f, "{what}: expected length {expected}, got {got}")
            }
            Error::Terminal => write!(f, "point is terminal (t = T); an interior point is required"),
            Error::Empty(what) => write!(f, "{what} is empty"),
            Error::Budget { needed, budget } => {
                write!(f, "enumeration needs {needed} evaluations, budget is {budget}")
            }
            Error::MissingTag(tag) => write!(f, "functional is not tagged `{tag}`"),
            Error::Precondition { what, estimate } => {
                write!(f, "precondition `{what}` failed (estimate {estimate})")
            }
            Error::Argument(what) => write!(f, "invalid argument: {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
