//! Teacher ensemble on disjoint private shards, noisy vote aggregation and
//! student distillation.
//!
//! Discriminator classes are `0 = private` and `1 = public`. Each teacher
//! learns its own shard (class 0) against a slice of public negatives
//! (class 1). A query sums the teachers' probability vectors, adds i.i.d.
//! `N(0, σ²)` noise per coordinate and releases only the argmax.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClassLabel, LabelVocab, Origin, PublicRecord, ShardPlan, TextRecord};
use crate::dp::{AccountingLedger, GaussianNoise, MechanismParams, PROBABILITY_SUM_SENSITIVITY};
use crate::error::{Error, Result};
use crate::model::{argmax, featurize, train, Classifier, Example, FeatureVector, LinearModel, TrainConfig};

pub const PRIVATE_CLASS: usize = 0;
pub const PUBLIC_CLASS: usize = 1;

pub const KD_MECHANISM: &str = "KD";

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherEnsemble {
    teachers: Vec<LinearModel>,
    plan_seed: u64,
    plan_digest: String,
}

impl TeacherEnsemble {
    pub fn teachers(&self) -> &[LinearModel] {
        &self.teachers
    }

    pub fn len(&self) -> usize {
        self.teachers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teachers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.teachers[0].dim()
    }

    pub fn plan_digest(&self) -> &str {
        &self.plan_digest
    }

    /// Writes `teacher_NNN.json` files plus `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::with_capacity(self.teachers.len());
        for (m, t) in self.teachers.iter().enumerate() {
            let name = format!("teacher_{m:03}.json");
            t.save(&dir.join(&name))?;
            files.push(name);
        }
        let manifest = EnsembleManifest {
            shard_count: self.teachers.len(),
            seed: self.plan_seed,
            assignments_digest: self.plan_digest.clone(),
            teachers: files,
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: EnsembleManifest = serde_json::from_str(&text)?;
        if manifest.teachers.len() != manifest.shard_count || manifest.shard_count == 0 {
            return Err(Error::Integrity("ensemble manifest teacher count mismatch".into()));
        }
        let teachers = manifest
            .teachers
            .iter()
            .map(|f| LinearModel::load(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            teachers,
            plan_seed: manifest.seed,
            plan_digest: manifest.assignments_digest,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleManifest {
    shard_count: usize,
    seed: u64,
    assignments_digest: String,
    teachers: Vec<String>,
}

/// Seed of teacher `m` given the base training seed.
fn teacher_seed(base: u64, m: usize) -> u64 {
    base.wrapping_add(m as u64)
}

/// Trains one teacher per shard. Shard `m` supplies positives; public
/// negatives are dealt round-robin (`k`-th negative to teacher `k mod M`).
/// Teacher `m` depends only on its shard, its negatives and `seed + m`.
pub fn train_teachers_on_shards(
    shards: &[Vec<TextRecord>],
    public_negatives: &[PublicRecord],
    config: &TrainConfig,
) -> Result<Vec<LinearModel>> {
    let m = shards.len();
    if m == 0 {
        return Err(Error::invalid("no shards to train teachers on"));
    }
    let mut seen = HashSet::new();
    for (s, shard) in shards.iter().enumerate() {
        if shard.is_empty() {
            return Err(Error::invalid(format!("shard {s} is empty")));
        }
        for r in shard {
            if r.origin() != Origin::Private {
                return Err(Error::Integrity(format!(
                    "shard {s} holds non-private record {}",
                    r.id()
                )));
            }
            if !seen.insert(r.id()) {
                return Err(Error::Integrity(format!(
                    "record {} is assigned to more than one teacher",
                    r.id()
                )));
            }
        }
    }
    if public_negatives.len() < m {
        return Err(Error::invalid(format!(
            "{} public negatives cannot cover {m} teachers",
            public_negatives.len()
        )));
    }

    let vocab = LabelVocab::discriminator();
    (0..m)
        .into_par_iter()
        .map(|t| {
            let mut examples: Vec<Example> = shards[t]
                .iter()
                .map(|r| Example {
                    features: featurize(r.text(), config.dim),
                    target: PRIVATE_CLASS,
                })
                .collect();
            examples.extend(public_negatives.iter().skip(t).step_by(m).map(|r| Example {
                features: featurize(r.text(), config.dim),
                target: PUBLIC_CLASS,
            }));
            let cfg = TrainConfig {
                seed: teacher_seed(config.seed, t),
                ..config.clone()
            };
            train(&examples, &vocab, &cfg).map(|(model, _)| model)
        })
        .collect()
}

pub fn train_teachers(
    private: &[TextRecord],
    plan: &ShardPlan,
    public_negatives: &[PublicRecord],
    config: &TrainConfig,
) -> Result<TeacherEnsemble> {
    let shards = plan.materialize(private)?;
    let teachers = train_teachers_on_shards(&shards, public_negatives, config)?;
    Ok(TeacherEnsemble {
        teachers,
        plan_seed: plan.seed,
        plan_digest: plan.digest(),
    })
}

/// Per-class sum of the teachers' probability vectors for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteVector {
    pub sums: Vec<f64>,
    pub teacher_count: usize,
}

impl VoteVector {
    pub fn noiseless_label(&self) -> usize {
        argmax(&self.sums)
    }
}

pub fn aggregate_votes(ensemble: &TeacherEnsemble, x: &FeatureVector) -> Result<VoteVector> {
    let mut sums = vec![0.0; 2];
    for t in &ensemble.teachers {
        for (s, p) in sums.iter_mut().zip(t.predict_proba(x)?.probs()) {
            *s += p;
        }
    }
    Ok(VoteVector {
        sums,
        teacher_count: ensemble.teachers.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyLabel {
    pub label: ClassLabel,
    pub noisy_scores: Vec<f64>,
    pub query_index: usize,
}

/// Adds one fresh `N(0, σ²)` draw to every coordinate and returns the
/// argmax (ties to the lower index).
pub fn noisy_label(
    votes: &VoteVector,
    sigma: f64,
    noise: &mut GaussianNoise,
    query_index: usize,
) -> Result<NoisyLabel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let noisy_scores: Vec<f64> = votes.sums.iter().map(|v| v + noise.gaussian(sigma)).collect();
    let label = LabelVocab::discriminator()
        .get(argmax(&noisy_scores))
        .ok_or_else(|| Error::invalid("vote vector has more than two classes"))?;
    Ok(NoisyLabel {
        label,
        noisy_scores,
        query_index,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillationConfig {
    pub sigma_kd: f64,
    pub query_budget: usize,
    pub student: TrainConfig,
    pub noise_seed: u64,
    /// Draw noise from OS entropy instead of `noise_seed`.
    #[serde(default)]
    pub secure_noise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillationReport {
    pub queries: usize,
    pub query_budget: usize,
    pub sigma_kd: f64,
    pub ledger_event: usize,
    /// Fraction of noisy labels that match the noiseless teacher argmax.
    pub agreement_rate: f64,
    pub private_labels: usize,
    pub public_labels: usize,
}

/// Queries the ensemble once per candidate, records one KD ledger event and
/// trains the student on the noisy pseudo-labels.
pub fn distill_student(
    ensemble: &TeacherEnsemble,
    candidates: &[PublicRecord],
    config: &DistillationConfig,
    ledger: &mut AccountingLedger,
) -> Result<(LinearModel, DistillationReport)> {
    if ledger.is_closed() {
        return Err(Error::LedgerClosed);
    }
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates to distill on"));
    }
    if candidates.len() > config.query_budget {
        return Err(Error::invalid(format!(
            "{} candidates exceed the query budget {}",
            candidates.len(),
            config.query_budget
        )));
    }
    if let Some(c) = candidates.iter().find(|c| c.origin() == Origin::Private) {
        return Err(Error::PrivacyViolation(format!(
            "candidate {} is private and cannot be shown to the student",
            c.id()
        )));
    }
    if config.student.dim != ensemble.dim() {
        return Err(Error::invalid("student and teacher feature dimensions differ"));
    }
    let params = MechanismParams::new(PROBABILITY_SUM_SENSITIVITY, config.sigma_kd)?;

    let features: Vec<FeatureVector> = candidates
        .par_iter()
        .map(|c| featurize(c.text(), config.student.dim))
        .collect();
    let votes = features
        .par_iter()
        .map(|x| aggregate_votes(ensemble, x))
        .collect::<Result<Vec<_>>>()?;

    let mut noise = if config.secure_noise {
        GaussianNoise::from_entropy()
    } else {
        GaussianNoise::from_seed(config.noise_seed)
    };
    let mut agree = 0;
    let mut counts = [0usize; 2];
    let mut examples = Vec::with_capacity(candidates.len());
    for (q, (x, v)) in features.into_iter().zip(&votes).enumerate() {
        let label = noisy_label(v, config.sigma_kd, &mut noise, q)?;
        if label.label.index == v.noiseless_label() {
            agree += 1;
        }
        counts[label.label.index] += 1;
        examples.push(Example {
            features: x,
            target: label.label.index,
        });
    }
    let event = ledger.record(KD_MECHANISM, params, candidates.len() as u64, None)?;

    let (student, _) = train(&examples, &LabelVocab::discriminator(), &config.student)?;
    Ok((
        student,
        DistillationReport {
            queries: candidates.len(),
            query_budget: config.query_budget,
            sigma_kd: config.sigma_kd,
            ledger_event: event,
            agreement_rate: agree as f64 / candidates.len() as f64,
            private_labels: counts[PRIVATE_CLASS],
            public_labels: counts[PUBLIC_CLASS],
        },
    ))
}

/// Student probability that `text` comes from the private domain.
pub fn private_score(student: &impl Classifier, text: &str) -> Result<f64> {
    Ok(student.predict_proba(&featurize(text, student.dim()))?.probs()[PRIVATE_CLASS])
}
