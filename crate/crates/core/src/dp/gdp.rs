//! Gaussian differential privacy (μ-GDP) for multi-query accounting.
//!
//! One Gaussian query with sensitivity Δ and noise σ is exactly `Δ/σ`-GDP, and
//! `T` such queries compose to `μ√T`-GDP. The `(ε, δ)` dual of a μ-GDP
//! mechanism has the same closed form as a single Gaussian release with
//! `Δ/σ = μ`.

use serde::{Deserialize, Serialize};

use super::gaussian::{delta_from_terms, MechanismParams, PrivacyBudget};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdpParam {
    mu: f64,
}

impl GdpParam {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::invalid(format!("mu must be finite and >= 0, got {mu}")));
        }
        Ok(Self { mu })
    }

    pub fn of_mechanism(params: &MechanismParams) -> Self {
        Self {
            mu: params.sensitivity() / params.sigma(),
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
}

pub fn compose_gdp(per_query: GdpParam, query_count: u64) -> Result<GdpParam> {
    if query_count == 0 {
        return Err(Error::invalid("query count must be at least 1"));
    }
    if query_count == 1 {
        return Ok(per_query);
    }
    GdpParam::new(per_query.mu * (query_count as f64).sqrt())
}

/// `δ = Φ(μ/2 − ε/μ) − e^ε Φ(−μ/2 − ε/μ)`; μ = 0 gives δ = 0.
pub fn gdp_to_budget(mu: GdpParam, epsilon: f64) -> Result<PrivacyBudget> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let delta = if mu.mu == 0.0 {
        0.0
    } else {
        let shift = epsilon / mu.mu;
        delta_from_terms(epsilon, mu.mu / 2.0 - shift, -mu.mu / 2.0 - shift)
    };
    Ok(PrivacyBudget { epsilon, delta })
}

/// Smallest ε at which a μ-GDP mechanism reaches the given δ.
pub fn gdp_epsilon_for_delta(mu: GdpParam, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("need 0 < delta < 1, got {delta}")));
    }
    let delta_at = |eps: f64| gdp_to_budget(mu, eps).map(|b| b.delta);
    if delta_at(0.0)? <= delta {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while delta_at(hi)? > delta {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::invalid(format!(
                "no epsilon below 1e6 reaches delta {delta} at mu {}",
                mu.mu
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if delta_at(mid)? > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}
