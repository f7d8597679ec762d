//! Gaussian-mechanism mathematics, noise and privacy accounting.

mod gaussian;
mod gdp;
mod ledger;
mod noise;
mod normal;
mod sensitivity;

pub use gaussian::{
    calibrate_sigma, compose_basic, gaussian_delta, MechanismParams, PrivacyBudget,
    SIGMA_RATIO_BOUNDS,
};
pub use gdp::{compose_gdp, gdp_epsilon_for_delta, gdp_to_budget, GdpParam};
pub use ledger::{AccountingLedger, BudgetReport, EventReport, LedgerEvent};
pub use noise::{sample_noise, GaussianNoise, NoiseVector};
pub use normal::std_normal_cdf;
pub use sensitivity::{brute_force_sensitivity, MAX_NEIGHBOR_PAIRS};

/// L2 sensitivity of a sum of per-record probability vectors under
/// substitution: one record's vector moves by at most `√2`.
pub const PROBABILITY_SUM_SENSITIVITY: f64 = std::f64::consts::SQRT_2;
