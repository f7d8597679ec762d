use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{save_jsonl, Origin, PublicRecord};
use crate::error::{Error, Result};
use crate::model::{Classifier, ProbVector};
use crate::pate::private_score;
use crate::tutor::LabelDistribution;

/// Number of augmented samples to keep per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionQuota {
    pub labels: Vec<String>,
    pub counts: Vec<usize>,
    pub total: usize,
}

impl SelectionQuota {
    pub fn new(labels: Vec<String>, counts: Vec<usize>) -> Result<Self> {
        if labels.len() != counts.len() {
            return Err(Error::invalid("quota labels and counts differ in length"));
        }
        let total = counts.iter().sum();
        if total == 0 {
            return Err(Error::invalid("quota total must be positive"));
        }
        Ok(Self { labels, counts, total })
    }
}

/// Largest-remainder apportionment of `total` slots by `probs`; leftover
/// slots go to the largest fractional parts, ties to the lower index.
pub fn apportion(probs: &ProbVector, total: usize) -> Vec<usize> {
    let exact: Vec<f64> = probs.probs().iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    // Rounding in the probabilities can leave `assigned` a slot off either way.
    if assigned <= total {
        for &i in order.iter().cycle().take(total - assigned) {
            counts[i] += 1;
        }
    } else {
        let mut excess = assigned - total;
        for &i in order.iter().rev() {
            if excess == 0 {
                break;
            }
            if counts[i] > 0 {
                counts[i] -= 1;
                excess -= 1;
            }
        }
    }
    counts
}

pub fn quotas(dist: &LabelDistribution, total: usize) -> Result<SelectionQuota> {
    if total == 0 {
        return Err(Error::invalid("augmentation size must be positive"));
    }
    SelectionQuota::new(dist.labels.clone(), apportion(&dist.probs, total))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub record: PublicRecord,
    /// Student probability of the private class.
    pub score: f64,
}

/// Scores every candidate with the student. Pure post-processing: nothing
/// here touches the ledger.
pub fn score_candidates(
    student: &(impl Classifier + Sync),
    candidates: Vec<PublicRecord>,
) -> Result<Vec<ScoredCandidate>> {
    candidates
        .into_par_iter()
        .map(|record| {
            let score = private_score(student, record.text())?;
            Ok(ScoredCandidate { record, score })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    /// Highest student score per class.
    Discriminator,
    /// Uniform choice per class, same quotas.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectOptions {
    pub method: SelectionMethod,
    pub seed: u64,
    pub min_score: Option<f64>,
}

impl SelectOptions {
    pub fn top_k(seed: u64) -> Self {
        Self {
            method: SelectionMethod::Discriminator,
            seed,
            min_score: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub quota: SelectionQuota,
    pub method: SelectionMethod,
    pub selection_seed: u64,
    pub sigma_kd: Option<f64>,
    pub sigma_tutor: Option<f64>,
    pub ledger_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    pub records: Vec<PublicRecord>,
    pub provenance: Provenance,
}

impl AugmentedDataset {
    fn checked(records: Vec<PublicRecord>, provenance: Provenance) -> Result<Self> {
        let mut per_class = vec![0usize; provenance.quota.counts.len()];
        let mut ids = HashSet::new();
        for r in &records {
            if r.origin() == Origin::Private {
                return Err(Error::PrivacyViolation(format!("record {} is private", r.id())));
            }
            if !ids.insert(r.id()) {
                return Err(Error::Integrity(format!("duplicate record id {}", r.id())));
            }
            *per_class
                .get_mut(r.label().index)
                .ok_or_else(|| Error::Integrity(format!("record {} has an unknown label", r.id())))? += 1;
        }
        if per_class != provenance.quota.counts {
            return Err(Error::Integrity(format!(
                "selected counts {per_class:?} differ from quota {:?}",
                provenance.quota.counts
            )));
        }
        Ok(Self { records, provenance })
    }

    /// Attaches the privacy parameters and ledger state the dataset was
    /// produced under.
    pub fn stamp(&mut self, sigma_kd: f64, sigma_tutor: f64, ledger_digest: String) {
        self.provenance.sigma_kd = Some(sigma_kd);
        self.provenance.sigma_tutor = Some(sigma_tutor);
        self.provenance.ledger_digest = Some(ledger_digest);
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        save_jsonl(self.records.iter().map(|r| r.record()), path)
    }
}

/// Picks `quota[c]` candidates of every class `c` and shuffles the result.
pub fn select(
    candidates: &[ScoredCandidate],
    quota: &SelectionQuota,
    options: &SelectOptions,
) -> Result<AugmentedDataset> {
    let classes = quota.counts.len();
    let mut pools: Vec<Vec<&ScoredCandidate>> = vec![Vec::new(); classes];
    for c in candidates {
        let label = c.record.label().index;
        if label >= classes {
            return Err(Error::invalid(format!("candidate {} has label outside the quota", c.record.id())));
        }
        if options.min_score.is_some_and(|m| c.score < m) {
            continue;
        }
        pools[label].push(c);
    }
    for (class, (pool, &want)) in pools.iter().zip(&quota.counts).enumerate() {
        if pool.len() < want {
            return Err(Error::Shortage {
                class: quota.labels[class].clone(),
                deficit: want - pool.len(),
            });
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(options.seed);
    let mut out = Vec::with_capacity(quota.total);
    for (pool, &want) in pools.iter_mut().zip(&quota.counts) {
        pool.sort_by(|a, b| a.record.id().cmp(b.record.id()));
        match options.method {
            SelectionMethod::Discriminator => {
                // Stable sort keeps the id order among equal scores.
                pool.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
            }
            SelectionMethod::Random => pool.shuffle(&mut rng),
        }
        out.extend(pool[..want].iter().map(|c| c.record.clone()));
    }
    out.shuffle(&mut rng);
    AugmentedDataset::checked(
        out,
        Provenance {
            quota: quota.clone(),
            method: options.method,
            selection_seed: options.seed,
            sigma_kd: None,
            sigma_tutor: None,
            ledger_digest: None,
        },
    )
}
