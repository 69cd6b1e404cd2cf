use thiserror::Error;

/// Errors raised by the solver, its configuration layer and the symbolic verifier.
#[derive(Debug, Error)]
pub enum Error {
    /// A user-supplied parameter is out of range. `field` names the offending key.
    #[error("invalid configuration for `{field}`: {message}")]
    Config { field: String, message: String },

    /// Two objects that must agree (spaces, component counts, lengths) do not.
    #[error("usage error: {0}")]
    Usage(String),

    /// A linear system could not be factorised.
    #[error("singular matrix: zero pivot at row {row}")]
    Singular { row: usize },

    /// Newton's method ran out of iterations.
    #[error(
        "newton failure{}: residual {residual:.3e} after {iterations} iterations",
        step.map(|s| format!(" at step {s}")).unwrap_or_default()
    )]
    NewtonFailure {
        step: Option<usize>,
        iterations: usize,
        residual: f64,
        multiplier: f64,
    },

    /// The homotopy operator was applied to something outside the image of `D_x`.
    #[error("polynomial is not a total x-derivative: {0}")]
    NotATotalDerivative(String),

    /// A jet variable would exceed the configured derivative order.
    #[error("jet derivative order {order} exceeds the bound {bound}")]
    OrderBound { order: usize, bound: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
