//! Digamma and log-factorial.

use crate::error::{Error, Result};

/// Digamma function Ψ(x) for x > 0.
pub fn digamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    statrs::function::gamma::digamma(x)
}

/// Digamma with a domain check: non-positive or non-finite arguments are an error.
pub fn checked_digamma(x: f64) -> Result<f64> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::Numeric(format!("digamma argument {x} is not a positive finite number")));
    }
    Ok(digamma(x))
}

/// ln(y!).
pub fn ln_factorial(y: u64) -> f64 {
    match y {
        0 | 1 => 0.0,
        _ => statrs::function::gamma::ln_gamma(y as f64 + 1.0),
    }
}
