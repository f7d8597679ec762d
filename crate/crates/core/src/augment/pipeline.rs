use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::select::{
    apportion, quotas, score_candidates, select, AugmentedDataset, ScoredCandidate, SelectOptions,
    SelectionMethod, SelectionQuota,
};
use crate::config::ResolvedConfig;
use crate::corpus::{ingest, partition, LabelVocab, PublicRecord, ShardPlan, TextRecord};
use crate::dp::{AccountingLedger, BudgetReport, GaussianNoise};
use crate::error::{Error, Result};
use crate::model::{LinearModel, ProbVector, TrainConfig};
use crate::pate::{distill_student, train_teachers, DistillationConfig, DistillationReport, TeacherEnsemble};
use crate::source::{CandidateSource, GenerationRequest};
use crate::tutor::{noisy_label_distribution, LabelDistribution};

/// ε values at which the budget report tabulates δ.
pub const REPORT_EPSILON_GRID: [f64; 7] = [0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];

/// Samples consumed from a candidate source, per label name. Lets a later
/// process resume the source without reusing anything already drawn.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoolCursor(pub BTreeMap<String, usize>);

impl PoolCursor {
    pub fn resume(&self, source: &mut dyn CandidateSource, vocab: &LabelVocab) -> Result<()> {
        for label in vocab.labels() {
            if let Some(&n) = self.0.get(&label.name) {
                if n > 0 {
                    source.skip(&label, n)?;
                }
            }
        }
        Ok(())
    }
}

/// Draws `counts[c]` samples of each class from the source.
pub fn draw(
    source: &mut dyn CandidateSource,
    vocab: &LabelVocab,
    template: &str,
    counts: &[usize],
    cursor: &mut PoolCursor,
) -> Result<Vec<PublicRecord>> {
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (label, &n) in vocab.labels().zip(counts) {
        if n == 0 {
            continue;
        }
        let req = GenerationRequest::new(label.clone(), n, template)?;
        let batch = source.next_batch(&req)?;
        if batch.len() != n || batch.iter().any(|r| r.label().index != label.index) {
            return Err(Error::Integrity(format!(
                "source returned a malformed batch for {}",
                label.name
            )));
        }
        *cursor.0.entry(label.name).or_default() += n;
        out.extend(batch);
    }
    Ok(out)
}

/// Draws `total` samples spread evenly over the labels.
pub fn draw_even(
    source: &mut dyn CandidateSource,
    vocab: &LabelVocab,
    template: &str,
    total: usize,
    cursor: &mut PoolCursor,
) -> Result<Vec<PublicRecord>> {
    let counts = apportion(&ProbVector::uniform(vocab.len()), total);
    draw(source, vocab, template, &counts, cursor)
}

pub fn plan_shards(private: &[TextRecord], resolved: &ResolvedConfig) -> Result<ShardPlan> {
    let cfg = &resolved.config;
    partition(private, cfg.teachers, cfg.seeds.partition)
}

pub fn teacher_config(resolved: &ResolvedConfig) -> TrainConfig {
    TrainConfig {
        seed: resolved.config.seeds.teachers,
        ..resolved.config.model.clone()
    }
}

pub fn distillation_config(resolved: &ResolvedConfig) -> DistillationConfig {
    let cfg = &resolved.config;
    DistillationConfig {
        sigma_kd: resolved.sigma_kd,
        query_budget: cfg.queries,
        student: TrainConfig {
            seed: cfg.seeds.student,
            ..cfg.model.clone()
        },
        noise_seed: cfg.seeds.kd_noise,
        secure_noise: cfg.secure_noise,
    }
}

pub fn release_tutor(
    private: &[TextRecord],
    vocab: &LabelVocab,
    resolved: &ResolvedConfig,
    ledger: &mut AccountingLedger,
) -> Result<LabelDistribution> {
    if ledger
        .events()
        .iter()
        .any(|e| e.mechanism == crate::tutor::TUTOR_MECHANISM)
    {
        return Err(Error::invalid("the tutor distribution was already released for this run"));
    }
    let mut noise = if resolved.config.secure_noise {
        GaussianNoise::from_entropy()
    } else {
        GaussianNoise::from_seed(resolved.config.seeds.tutor_noise)
    };
    noisy_label_distribution(private, vocab, resolved.sigma_tutor, &mut noise, ledger)
}

/// Candidate counts per class: `oversample` per quota slot.
pub fn generation_counts(quota: &SelectionQuota, oversample: usize) -> Vec<usize> {
    quota.counts.iter().map(|c| c * oversample).collect()
}

/// Per-class shortfall of usable candidates against the quota.
fn deficits(candidates: &[ScoredCandidate], quota: &SelectionQuota, min_score: Option<f64>) -> Vec<usize> {
    let mut have = vec![0usize; quota.counts.len()];
    for c in candidates {
        if min_score.is_none_or(|m| c.score >= m) {
            if let Some(h) = have.get_mut(c.record.label().index) {
                *h += 1;
            }
        }
    }
    quota.counts.iter().zip(have).map(|(&w, h)| w.saturating_sub(h)).collect()
}

/// Selects against the quota; on a shortage requests `oversample` more
/// candidates per missing slot once, then gives up.
#[allow(clippy::too_many_arguments)]
pub fn select_with_refill(
    student: &LinearModel,
    mut candidates: Vec<ScoredCandidate>,
    quota: &SelectionQuota,
    options: &SelectOptions,
    oversample: usize,
    source: &mut dyn CandidateSource,
    vocab: &LabelVocab,
    template: &str,
    cursor: &mut PoolCursor,
) -> Result<(AugmentedDataset, Vec<ScoredCandidate>)> {
    let missing = deficits(&candidates, quota, options.min_score);
    if missing.iter().any(|&d| d > 0) {
        let more: Vec<usize> = missing.iter().map(|d| d * oversample).collect();
        log::info!("refilling candidates: {more:?}");
        match draw(source, vocab, template, &more, cursor) {
            Ok(extra) => candidates.extend(score_candidates(student, extra)?),
            Err(Error::Exhausted { label }) => log::warn!("source exhausted for {label} during refill"),
            Err(e) => return Err(e),
        }
    }
    let dataset = select(&candidates, quota, options)?;
    Ok((dataset, candidates))
}

/// Everything one pipeline run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub private_count: usize,
    pub plan: ShardPlan,
    pub ensemble: TeacherEnsemble,
    pub negatives: Vec<PublicRecord>,
    pub distill_candidates: Vec<PublicRecord>,
    pub student: LinearModel,
    pub distillation: DistillationReport,
    pub tutor: LabelDistribution,
    pub quota: SelectionQuota,
    pub candidates: Vec<ScoredCandidate>,
    pub dataset: AugmentedDataset,
    pub ledger: AccountingLedger,
    pub budget: BudgetReport,
    pub cursor: PoolCursor,
}

/// dedup → partition → teachers → distill → tutor → generate → score →
/// quotas → select, then closes the ledger.
pub fn run_pipeline(
    resolved: &ResolvedConfig,
    private: Vec<TextRecord>,
    vocab: &LabelVocab,
    source: &mut dyn CandidateSource,
    template: &str,
) -> Result<PipelineOutput> {
    run_pipeline_with(resolved, private, vocab, source, template, SelectionMethod::Discriminator)
}

pub fn run_pipeline_with(
    resolved: &ResolvedConfig,
    private: Vec<TextRecord>,
    vocab: &LabelVocab,
    source: &mut dyn CandidateSource,
    template: &str,
    method: SelectionMethod,
) -> Result<PipelineOutput> {
    let cfg = &resolved.config;
    let private = ingest(private);
    let mut ledger = AccountingLedger::new();
    let mut cursor = PoolCursor::default();

    let plan = plan_shards(&private, resolved)?;
    let negatives = draw_even(
        source,
        vocab,
        template,
        cfg.negatives.unwrap_or(private.len()),
        &mut cursor,
    )?;
    let ensemble = train_teachers(&private, &plan, &negatives, &teacher_config(resolved))?;

    let distill_candidates = draw_even(source, vocab, template, cfg.queries, &mut cursor)?;
    let (student, distillation) =
        distill_student(&ensemble, &distill_candidates, &distillation_config(resolved), &mut ledger)?;

    let tutor = release_tutor(&private, vocab, resolved, &mut ledger)?;
    let quota = quotas(&tutor, cfg.n_aug)?;

    let mut pool = draw(source, vocab, template, &generation_counts(&quota, cfg.oversample), &mut cursor)?;
    if cfg.merge_pools {
        pool.extend(distill_candidates.iter().cloned());
    }
    let scored = score_candidates(&student, pool)?;
    let options = SelectOptions {
        method,
        seed: cfg.seeds.selection,
        min_score: cfg.min_score,
    };
    let (mut dataset, candidates) = select_with_refill(
        &student,
        scored,
        &quota,
        &options,
        cfg.oversample,
        source,
        vocab,
        template,
        &mut cursor,
    )?;

    ledger.close();
    dataset.stamp(resolved.sigma_kd, resolved.sigma_tutor, ledger.digest());
    let budget = ledger.report(cfg.report_delta, &REPORT_EPSILON_GRID)?;
    Ok(PipelineOutput {
        private_count: private.len(),
        plan,
        ensemble,
        negatives,
        distill_candidates,
        student,
        distillation,
        tutor,
        quota,
        candidates,
        dataset,
        ledger,
        budget,
        cursor,
    })
}
