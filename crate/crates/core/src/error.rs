use thiserror::Error;

/// Errors raised by the sampling library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("invalid input `{field}`: {reason}")]
    InvalidInput { field: &'static str, reason: String },

    /// Two collections that must agree in shape did not.
    #[error("dimension mismatch for `{field}`: expected {expected}, got {actual}")]
    DimensionMismatch {
        field: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A configuration combination the library does not support.
    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    /// The box constraints of the variance program do not meet the simplex.
    #[error("infeasible box: sum of lower bounds {lower_sum}, sum of upper bounds {upper_sum}")]
    Infeasible { lower_sum: f64, upper_sum: f64 },

    /// A computation lost all precision (e.g. a truncation interval with no mass).
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    /// The sampling environment failed to produce an outcome.
    #[error("environment failure: {0}")]
    Environment(String),

    /// Local-averaging rejection sampler could not find the ball.
    #[error("radius too small: acceptance rate {rate:e} below 1e-6; use direct perturbation instead")]
    RadiusTooSmall { rate: f64 },

    /// Survey data failed validation.
    #[error("{}", format_rows(.0))]
    Survey(Vec<RowDiagnostic>),

    #[error("io error: {0}")]
    Io(String),
}

/// One validation failure in a survey file, with a 1-based line number
/// (0 for file-level problems).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RowDiagnostic {
    pub row: usize,
    pub message: String,
}

impl RowDiagnostic {
    pub fn new(row: usize, message: impl Into<String>) -> Self {
        Self {
            row,
            message: message.into(),
        }
    }
}

fn format_rows(rows: &[RowDiagnostic]) -> String {
    rows.iter()
        .map(|d| {
            if d.row == 0 {
                d.message.clone()
            } else {
                format!("row {}: {}", d.row, d.message)
            }
        })
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn check_len(field: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                field,
                expected,
                actual,
            })
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
