use alloc::string::String;

/// Errors reported by oracles, solvers, and instance builders.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector had the wrong length for the operation.
    Dimension {
        /// Length the operation required.
        expected: usize,
        /// Length that was supplied.
        got: usize,
    },
    /// A point, coefficient, or oracle output was not finite.
    NotFinite(&'static str),
    /// A configuration field violated its documented range.
    Config {
        /// Name of the offending field.
        field: &'static str,
        /// What was wrong with it.
        message: String,
    },
    /// The requested instance is not in the registry.
    UnknownInstance(String),
    /// The problem lacks an oracle or structure the solver needs.
    Missing(&'static str),
    /// The point lies outside the feasible set beyond tolerance.
    Infeasible {
        /// Constraint violation measured at the point.
        violation: f64,
    },
    /// The master solver could not certify a solution within its budget.
    Master {
        /// Why certification failed.
        reason: String,
        /// Inner iterations spent before giving up.
        iterations: usize,
    },
    /// The operation is not defined for the given variant.
    Unsupported(&'static str),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Error::Dimension { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::NotFinite(what) => write!(f, "{what} is not finite"),
            Error::Config { field, message } => write!(f, "invalid config `{field}`: {message}"),
            Error::UnknownInstance(name) => write!(f, "unknown instance `{name}`"),
            Error::Missing(what) => write!(f, "problem does not provide {what}"),
            Error::Infeasible { violation } => {
                write!(f, "point is infeasible (violation {violation:e})")
            }
            Error::Master { reason, iterations } => {
                write!(f, "master solve failed after {iterations} iterations: {reason}")
            }
            Error::Unsupported(what) => write!(f, "unsupported operation: {what}"),
        }
    }
}

impl core::error::Error for Error {}
