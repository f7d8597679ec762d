use crate::error::{Error, Result};

/// Standard normal CDF, `Φ(x) = erfc(-x/√2) / 2`.
///
/// `libm::erfc` keeps full relative precision deep into the lower tail,
/// which is where the δ values of a well-calibrated mechanism live.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("std_normal_cdf of non-finite {x}")));
    }
    Ok(phi(x))
}

/// Infallible variant for internal callers that have already validated input.
/// Infinite arguments map to 0 and 1.
pub(crate) fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}
