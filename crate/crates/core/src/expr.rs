//! User-supplied scalar functions of one variable `t`, parsed from text.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

thread_local! {
    static BUILTINS: meval::Context<'static> = meval::Context::new();
}

/// A scalar function `t -> y` given either as a parsed expression or as a native closure.
#[derive(Clone)]
pub struct ScalarFn {
    source: Option<String>,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl ScalarFn {
    /// Parses an expression in the variable `t`, e.g. `"exp(t)"` or `"t^2 + 1"`.
    pub fn parse(source: &str) -> Result<Self> {
        let expr: meval::Expr = source
            .parse()
            .map_err(|e| Error::domain(format!("cannot parse `{source}`: {e}")))?;
        // Reject free variables other than `t` up front.
        BUILTINS
            .with(|ctx| expr.eval_with_context((("t", 1.0), ctx)))
            .map_err(|e| Error::domain(format!("cannot evaluate `{source}`: {e}")))?;
        let eval = move |t: f64| {
            BUILTINS
                .with(|ctx| expr.eval_with_context((("t", t), ctx)))
                .unwrap_or(f64::NAN)
        };
        Ok(ScalarFn {
            source: Some(source.to_string()),
            eval: Arc::new(eval),
        })
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        ScalarFn {
            source: None,
            eval: Arc::new(f),
        }
    }

    #[inline]
    pub fn call(&self, t: f64) -> f64 {
        (self.eval)(t)
    }

    /// The expression text, when this function was parsed from one.
    pub fn source(&self) -> Option<&str> {
        self.source.as_deref()
    }
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            Some(s) => write!(f, "ScalarFn({s:?})"),
            None => write!(f, "ScalarFn(<native>)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_evaluates() {
        let f = ScalarFn::parse("exp(t) + t^2").unwrap();
        assert!((f.call(1.0) - (std::f64::consts::E + 1.0)).abs() < 1e-15);
        assert_eq!(f.source(), Some("exp(t) + t^2"));
    }

    #[test]
    fn rejects_unknown_variable() {
        assert!(ScalarFn::parse("x + 1").is_err());
        assert!(ScalarFn::parse("t +").is_err());
    }
}
