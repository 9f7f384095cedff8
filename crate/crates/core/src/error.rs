use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iteration failed to converge. `bracket` holds the last enclosing interval, when one exists.
    #[error("numeric error: {message}{}", fmt_bracket(.bracket))]
    Numeric {
        message: String,
        bracket: Option<(f64, f64)>,
    },

    /// A shooting level could not be bracketed on `(0, upper]`.
    #[error(
        "level {level} not bracketed below d = {upper:e} after {halvings} halvings; \
         z_l(d) -> 0 as d -> 0 guarantees a bracket, check the solver tolerances"
    )]
    NotBracketed {
        level: usize,
        upper: f64,
        halvings: usize,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

fn fmt_bracket(bracket: &Option<(f64, f64)>) -> String {
    match bracket {
        Some((a, b)) => format!(" (final bracket [{a:e}, {b:e}])"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric {
            message: msg.into(),
            bracket: None,
        }
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: msg.into(),
        }
    }

    /// Whether this error reflects invalid input rather than a failed computation.
    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::Config { .. })
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
