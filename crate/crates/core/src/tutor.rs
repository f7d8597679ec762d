//! Differentially private release of the private label marginal.
//!
//! Noise `N(0, σ²)` is added to each coordinate of the label count vector
//! `Σ_j onehot(c_j)` (L2 sensitivity √2 under substitution), which is then
//! divided by N, clamped to [0, 1] and renormalized.

use serde::{Deserialize, Serialize};

use crate::corpus::{LabelVocab, Origin, TextRecord};
use crate::dp::{AccountingLedger, GaussianNoise, MechanismParams, PROBABILITY_SUM_SENSITIVITY};
use crate::error::{Error, Result};
use crate::model::ProbVector;

pub const TUTOR_MECHANISM: &str = "tutor";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub labels: Vec<String>,
    pub probs: ProbVector,
    pub sigma: f64,
    #[serde(rename = "N")]
    pub sample_count: usize,
    pub ledger_event: usize,
}

/// Per-class counts of the records' labels.
pub fn label_counts(records: &[TextRecord], class_count: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; class_count];
    for r in records {
        let c = r.label().index;
        if c >= class_count {
            return Err(Error::invalid(format!(
                "label index {c} outside {class_count} classes"
            )));
        }
        counts[c] += 1.0;
    }
    Ok(counts)
}

/// Clamps to [0, 1] and rescales to sum 1; falls back to uniform when every
/// coordinate clamps to 0.
pub fn clamp_and_renormalize(values: &[f64]) -> ProbVector {
    let clamped: Vec<f64> = values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total <= 0.0 {
        log::warn!("all tutor coordinates clamped to zero; using the uniform distribution");
        return ProbVector::uniform(values.len());
    }
    let mut probs: Vec<f64> = clamped.iter().map(|v| v / total).collect();
    // Keep entries inside [0, 1] after rounding.
    probs.iter_mut().for_each(|p| *p = p.min(1.0));
    ProbVector::new(probs).expect("clamped and rescaled values form a distribution")
}

pub fn noisy_label_distribution(
    private: &[TextRecord],
    vocab: &LabelVocab,
    sigma: f64,
    noise: &mut GaussianNoise,
    ledger: &mut AccountingLedger,
) -> Result<LabelDistribution> {
    if ledger.is_closed() {
        return Err(Error::LedgerClosed);
    }
    if private.is_empty() {
        return Err(Error::invalid("tutor needs at least one private record"));
    }
    if let Some(r) = private.iter().find(|r| r.origin() != Origin::Private) {
        return Err(Error::invalid(format!(
            "tutor input record {} has origin {}",
            r.id(),
            r.origin()
        )));
    }
    let params = MechanismParams::new(PROBABILITY_SUM_SENSITIVITY, sigma)?;
    let n = private.len() as f64;
    let noisy: Vec<f64> = label_counts(private, vocab.len())?
        .into_iter()
        .map(|c| (c + noise.gaussian(sigma)) / n)
        .collect();
    let event = ledger.record(TUTOR_MECHANISM, params, 1, Some(private.len()))?;
    Ok(LabelDistribution {
        labels: vocab.names().to_vec(),
        probs: clamp_and_renormalize(&noisy),
        sigma,
        sample_count: private.len(),
        ledger_event: event,
    })
}
