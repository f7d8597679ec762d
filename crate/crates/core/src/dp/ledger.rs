//! Append-only record of every privacy-spending release.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::gaussian::{compose_basic, MechanismParams, PrivacyBudget};
use super::gdp::{compose_gdp, gdp_epsilon_for_delta, gdp_to_budget, GdpParam};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub id: usize,
    pub mechanism: String,
    pub params: MechanismParams,
    pub query_count: u64,
    /// Number of records summed by the query, when the release is an average.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
}

impl LedgerEvent {
    /// GDP parameter of all `query_count` releases together.
    pub fn gdp(&self) -> GdpParam {
        compose_gdp(GdpParam::of_mechanism(&self.params), self.query_count)
            .expect("query_count >= 1 is enforced on append")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccountingLedger {
    events: Vec<LedgerEvent>,
    closed: bool,
}

impl AccountingLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an event and returns its id.
    pub fn record(
        &mut self,
        mechanism: impl Into<String>,
        params: MechanismParams,
        query_count: u64,
        sample_count: Option<usize>,
    ) -> Result<usize> {
        if self.closed {
            return Err(Error::LedgerClosed);
        }
        if query_count == 0 {
            return Err(Error::invalid("ledger events need query_count >= 1"));
        }
        let id = self.events.len();
        self.events.push(LedgerEvent {
            id,
            mechanism: mechanism.into(),
            params,
            query_count,
            sample_count,
        });
        Ok(id)
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    /// SHA-256 over the canonical JSON of the event list.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.events).expect("ledger events serialize");
        hex::encode(Sha256::digest(bytes))
    }

    /// Per-event `(ε, δ)` curves and the basic composition of all events,
    /// each event charged at `target_delta`.
    pub fn report(&self, target_delta: f64, epsilon_grid: &[f64]) -> Result<BudgetReport> {
        if self.events.is_empty() {
            return Err(Error::invalid("ledger has no events to report"));
        }
        let mut events = Vec::with_capacity(self.events.len());
        let mut budgets = Vec::with_capacity(self.events.len());
        for ev in &self.events {
            let mu = ev.gdp();
            let epsilon = gdp_epsilon_for_delta(mu, target_delta)?;
            let budget = PrivacyBudget {
                epsilon,
                delta: target_delta,
            };
            budgets.push(budget);
            let curve = epsilon_grid
                .iter()
                .map(|&e| gdp_to_budget(mu, e))
                .collect::<Result<Vec<_>>>()?;
            // Same sigma read as noise on the 1/N-scaled average instead of the sum.
            let mean_interpretation = match ev.sample_count {
                Some(n) if n > 0 => {
                    let scaled = GdpParam::new(mu.mu() / n as f64)?;
                    Some(PrivacyBudget {
                        epsilon: gdp_epsilon_for_delta(scaled, target_delta)?,
                        delta: target_delta,
                    })
                }
                _ => None,
            };
            events.push(EventReport {
                id: ev.id,
                mechanism: ev.mechanism.clone(),
                sensitivity: ev.params.sensitivity(),
                sigma: ev.params.sigma(),
                query_count: ev.query_count,
                mu: mu.mu(),
                budget,
                curve,
                mean_interpretation,
            });
        }
        Ok(BudgetReport {
            target_delta,
            events,
            total: compose_basic(&budgets)?,
            ledger_digest: self.digest(),
            closed: self.closed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub id: usize,
    pub mechanism: String,
    pub sensitivity: f64,
    pub sigma: f64,
    pub query_count: u64,
    pub mu: f64,
    pub budget: PrivacyBudget,
    pub curve: Vec<PrivacyBudget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_interpretation: Option<PrivacyBudget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub target_delta: f64,
    pub events: Vec<EventReport>,
    pub total: PrivacyBudget,
    pub ledger_digest: String,
    pub closed: bool,
}

impl BudgetReport {
    pub fn mechanism_budgets(&self) -> Vec<PrivacyBudget> {
        self.events.iter().map(|e| e.budget).collect()
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "privacy ledger {} (closed: {})", self.ledger_digest, self.closed);
        for e in &self.events {
            let _ = writeln!(
                out,
                "  #{} {:<8} Δ={:.6} σ={:.6} queries={} μ={:.6} → (ε={:.6}, δ={:e})",
                e.id,
                e.mechanism,
                e.sensitivity,
                e.sigma,
                e.query_count,
                e.mu,
                e.budget.epsilon,
                e.budget.delta
            );
            if let Some(m) = e.mean_interpretation {
                let _ = writeln!(
                    out,
                    "      noise-on-mean reading: (ε={:.6}, δ={:e})",
                    m.epsilon, m.delta
                );
            }
            for b in &e.curve {
                let _ = writeln!(out, "      ε={:<8} δ={:e}", b.epsilon, b.delta);
            }
        }
        let _ = writeln!(
            out,
            "total: (ε={:.6}, δ={:e})",
            self.total.epsilon, self.total.delta
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    fn kd() -> MechanismParams {
        MechanismParams::new(SQRT_2, 6.0).unwrap()
    }

    #[test]
    fn closed_ledger_rejects_appends() {
        let mut l = AccountingLedger::new();
        l.record("KD", kd(), 3, None).unwrap();
        l.close();
        assert!(matches!(l.record("KD", kd(), 1, None), Err(Error::LedgerClosed)));
        assert_eq!(l.events().len(), 1);
    }

    #[test]
    fn zero_queries_rejected() {
        let mut l = AccountingLedger::new();
        assert!(l.record("KD", kd(), 0, None).is_err());
    }

    #[test]
    fn report_total_is_basic_composition() {
        let mut l = AccountingLedger::new();
        l.record("KD", kd(), 100, None).unwrap();
        l.record("tutor", MechanismParams::new(SQRT_2, 14.0).unwrap(), 1, Some(3000))
            .unwrap();
        let r = l.report(1e-6, &[0.5, 1.0]).unwrap();
        let expected = compose_basic(&r.mechanism_budgets()).unwrap();
        assert_eq!(r.total, expected);
        assert!((r.events[0].budget.epsilon - 13.436_612_407_935_612).abs() < 1e-8);
        assert_eq!(r.events[0].curve.len(), 2);
        let mean = r.events[1].mean_interpretation.unwrap();
        assert!(mean.epsilon < r.events[1].budget.epsilon);
    }

    #[test]
    fn repeated_tutor_doubles_budget() {
        let tutor = MechanismParams::new(SQRT_2, 14.0).unwrap();
        let mut once = AccountingLedger::new();
        once.record("tutor", tutor, 1, None).unwrap();
        let mut twice = once.clone();
        twice.record("tutor", tutor, 1, None).unwrap();
        let a = once.report(1e-6, &[]).unwrap().total;
        let b = twice.report(1e-6, &[]).unwrap().total;
        assert!((b.epsilon - 2.0 * a.epsilon).abs() < 1e-12);
        assert!((b.delta - 2.0 * a.delta).abs() < 1e-18);
    }

    #[test]
    fn digest_tracks_events() {
        let mut l = AccountingLedger::new();
        let d0 = l.digest();
        l.record("KD", kd(), 1, None).unwrap();
        assert_ne!(d0, l.digest());
        assert_eq!(l.digest(), l.clone().digest());
    }
}
