//! On-disk layout of a run and the individual pipeline stages over it.
//!
//! Files written under the run directory:
//!
//! | file | contents | releasable |
//! |---|---|---|
//! | `vocab.json` | label vocabulary | yes |
//! | `private.jsonl` | ingested private corpus | no |
//! | `shard_plan.json` | record → teacher assignment | no |
//! | `teachers/` | teacher models and manifest | no |
//! | `negatives.jsonl` | public negatives used by the teachers | yes |
//! | `distill_candidates.jsonl` | public records queried against the teachers | yes |
//! | `student.json`, `distillation.json` | DP discriminator and its report | yes |
//! | `tutor.json` | DP label distribution | yes |
//! | `quota.json`, `candidates.jsonl`, `scores.jsonl` | selection inputs | yes |
//! | `augmented.jsonl` | selected records | yes |
//! | `ledger.json`, `budget.json`, `budget.txt` | privacy accounting | yes |
//! | `cursor.json` | samples consumed from the candidate source | yes |
//! | `manifest.json` | resolved config, digests, composed budget | yes |

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{
    draw, draw_even, generation_counts, plan_shards, quotas, release_tutor, run_pipeline, score_candidates,
    select_with_refill, teacher_config, distillation_config, PoolCursor, ScoredCandidate, SelectOptions, SelectionMethod,
    SelectionQuota, REPORT_EPSILON_GRID,
};
use crate::config::ResolvedConfig;
use crate::corpus::{
    ingest, load_jsonl, load_private_jsonl, load_vocab, save_jsonl, save_vocab, to_public, LabelVocab,
    PublicRecord, ShardPlan, TextRecord,
};
use crate::dp::{AccountingLedger, BudgetReport, PrivacyBudget};
use crate::error::{Error, Result};
use crate::model::LinearModel;
use crate::pate::{distill_student, train_teachers, DistillationReport, TeacherEnsemble, KD_MECHANISM};
use crate::source::{open_source, CandidateSource};
use crate::tutor::LabelDistribution;

pub const VOCAB: &str = "vocab.json";
pub const PRIVATE: &str = "private.jsonl";
pub const SHARD_PLAN: &str = "shard_plan.json";
pub const TEACHERS: &str = "teachers";
pub const NEGATIVES: &str = "negatives.jsonl";
pub const DISTILL_CANDIDATES: &str = "distill_candidates.jsonl";
pub const STUDENT: &str = "student.json";
pub const DISTILLATION: &str = "distillation.json";
pub const TUTOR: &str = "tutor.json";
pub const QUOTA: &str = "quota.json";
pub const CANDIDATES: &str = "candidates.jsonl";
pub const SCORES: &str = "scores.jsonl";
pub const AUGMENTED: &str = "augmented.jsonl";
pub const LEDGER: &str = "ledger.json";
pub const BUDGET: &str = "budget.json";
pub const BUDGET_TEXT: &str = "budget.txt";
pub const CURSOR: &str = "cursor.json";
pub const MANIFEST: &str = "manifest.json";

/// Files covered by the manifest digests, in a fixed order.
pub const DIGESTED: [&str; 10] = [
    NEGATIVES,
    DISTILL_CANDIDATES,
    STUDENT,
    TUTOR,
    QUOTA,
    CANDIDATES,
    SCORES,
    AUGMENTED,
    LEDGER,
    BUDGET,
];

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn create(&self) -> Result<()> {
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))
    }

    /// Missing stage inputs are a usage problem, reported with the path.
    fn require(&self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::invalid(format!(
                "missing input {}; run the earlier stage first",
                p.display()
            )))
        }
    }

    fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let p = self.require(name)?;
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    pub fn vocab(&self) -> Result<LabelVocab> {
        load_vocab(&self.require(VOCAB)?)
    }

    /// The ingested private corpus. Goes through the audited loader.
    pub fn private(&self, vocab: &LabelVocab) -> Result<Vec<TextRecord>> {
        load_private_jsonl(&self.require(PRIVATE)?, vocab)
    }

    fn public(&self, name: &str, vocab: &LabelVocab) -> Result<Vec<PublicRecord>> {
        to_public(load_jsonl(&self.require(name)?, vocab)?)
    }

    fn save_public(&self, name: &str, records: &[PublicRecord]) -> Result<()> {
        save_jsonl(records.iter().map(|r| r.record()), &self.path(name))
    }

    pub fn ledger(&self) -> Result<AccountingLedger> {
        if self.path(LEDGER).exists() {
            self.read_json(LEDGER)
        } else {
            Ok(AccountingLedger::new())
        }
    }

    fn cursor(&self) -> Result<PoolCursor> {
        if self.path(CURSOR).exists() {
            self.read_json(CURSOR)
        } else {
            Ok(PoolCursor::default())
        }
    }

    /// Removes every artifact this module writes, leaving other files.
    pub fn clear(&self) -> Result<()> {
        let files = [
            VOCAB, PRIVATE, SHARD_PLAN, NEGATIVES, DISTILL_CANDIDATES, STUDENT, DISTILLATION, TUTOR, QUOTA,
            CANDIDATES, SCORES, AUGMENTED, LEDGER, BUDGET, BUDGET_TEXT, CURSOR, MANIFEST,
        ];
        for f in files {
            let p = self.path(f);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        let t = self.path(TEACHERS);
        if t.exists() {
            std::fs::remove_dir_all(&t).map_err(|e| Error::io(&t, e))?;
        }
        Ok(())
    }

    pub fn digests(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for name in DIGESTED {
            let p = self.path(name);
            if p.exists() {
                let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
                out.push((name.to_string(), hex::encode(Sha256::digest(bytes))));
            }
        }
        Ok(out)
    }
}

fn template(resolved: &ResolvedConfig) -> Result<String> {
    resolved.config.source.template()
}

fn source(resolved: &ResolvedConfig, vocab: &LabelVocab, cursor: &PoolCursor) -> Result<Box<dyn CandidateSource + Send>> {
    let mut s = open_source(&resolved.config.source, resolved.config.paths.public.as_deref(), vocab)?;
    cursor.resume(s.as_mut(), vocab)?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub read: usize,
    pub kept: usize,
}

/// Normalizes and deduplicates the private corpus into the run directory.
pub fn stage_ingest(resolved: &ResolvedConfig, run: &RunDir) -> Result<IngestSummary> {
    let paths = &resolved.config.paths;
    let vocab_path = paths
        .vocab
        .as_deref()
        .ok_or_else(|| Error::Config("paths.vocab is required".into()))?;
    let private_path = paths
        .private
        .as_deref()
        .ok_or_else(|| Error::Config("paths.private is required".into()))?;
    let vocab = load_vocab(vocab_path)?;
    let raw = load_private_jsonl(private_path, &vocab)?;
    let read = raw.len();
    let kept = ingest(raw);
    run.create()?;
    save_vocab(&vocab, &run.path(VOCAB))?;
    save_jsonl(&kept, &run.path(PRIVATE))?;
    Ok(IngestSummary {
        read,
        kept: kept.len(),
    })
}

pub fn stage_partition(resolved: &ResolvedConfig, run: &RunDir) -> Result<ShardPlan> {
    let vocab = run.vocab()?;
    let plan = plan_shards(&run.private(&vocab)?, resolved)?;
    run.write_json(SHARD_PLAN, &plan)?;
    Ok(plan)
}

pub fn stage_train_teachers(resolved: &ResolvedConfig, run: &RunDir) -> Result<TeacherEnsemble> {
    let vocab = run.vocab()?;
    let private = run.private(&vocab)?;
    let plan: ShardPlan = run.read_json(SHARD_PLAN)?;
    let mut cursor = run.cursor()?;
    let mut src = source(resolved, &vocab, &cursor)?;
    let n = resolved.config.negatives.unwrap_or(private.len());
    let negatives = draw_even(src.as_mut(), &vocab, &template(resolved)?, n, &mut cursor)?;
    let ensemble = train_teachers(&private, &plan, &negatives, &teacher_config(resolved))?;
    ensemble.save(&run.path(TEACHERS))?;
    run.save_public(NEGATIVES, &negatives)?;
    run.write_json(CURSOR, &cursor)?;
    Ok(ensemble)
}

pub fn stage_distill(resolved: &ResolvedConfig, run: &RunDir) -> Result<DistillationReport> {
    let vocab = run.vocab()?;
    let mut ledger = run.ledger()?;
    if ledger.events().iter().any(|e| e.mechanism == KD_MECHANISM) {
        return Err(Error::invalid(
            "this run already spent its distillation budget; start a new run directory",
        ));
    }
    let ensemble = TeacherEnsemble::load(&run.require(TEACHERS)?)?;
    let mut cursor = run.cursor()?;
    let mut src = source(resolved, &vocab, &cursor)?;
    let candidates = draw_even(src.as_mut(), &vocab, &template(resolved)?, resolved.config.queries, &mut cursor)?;
    let (student, report) = distill_student(&ensemble, &candidates, &distillation_config(resolved), &mut ledger)?;
    student.save(&run.path(STUDENT))?;
    run.save_public(DISTILL_CANDIDATES, &candidates)?;
    run.write_json(DISTILLATION, &report)?;
    run.write_json(LEDGER, &ledger)?;
    run.write_json(CURSOR, &cursor)?;
    Ok(report)
}

pub fn stage_tutor(resolved: &ResolvedConfig, run: &RunDir) -> Result<LabelDistribution> {
    let vocab = run.vocab()?;
    let mut ledger = run.ledger()?;
    let dist = release_tutor(&run.private(&vocab)?, &vocab, resolved, &mut ledger)?;
    run.write_json(TUTOR, &dist)?;
    run.write_json(LEDGER, &ledger)?;
    Ok(dist)
}

pub fn stage_generate(resolved: &ResolvedConfig, run: &RunDir) -> Result<SelectionQuota> {
    let vocab = run.vocab()?;
    let dist: LabelDistribution = run.read_json(TUTOR)?;
    let quota = quotas(&dist, resolved.config.n_aug)?;
    let mut cursor = run.cursor()?;
    let mut src = source(resolved, &vocab, &cursor)?;
    let counts = generation_counts(&quota, resolved.config.oversample);
    let mut pool = draw(src.as_mut(), &vocab, &template(resolved)?, &counts, &mut cursor)?;
    if resolved.config.merge_pools {
        pool.extend(run.public(DISTILL_CANDIDATES, &vocab)?);
    }
    run.save_public(CANDIDATES, &pool)?;
    run.write_json(QUOTA, &quota)?;
    run.write_json(CURSOR, &cursor)?;
    Ok(quota)
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    id: &'a str,
    label: &'a str,
    score: f64,
}

/// Rewrites the candidate pool (refills included) and its scores.
fn write_scored(run: &RunDir, scored: &[ScoredCandidate]) -> Result<()> {
    let candidates: Vec<PublicRecord> = scored.iter().map(|c| c.record.clone()).collect();
    run.save_public(CANDIDATES, &candidates)?;
    let mut lines = String::new();
    for c in scored {
        lines.push_str(&serde_json::to_string(&ScoreLine {
            id: c.record.id(),
            label: &c.record.label().name,
            score: c.score,
        })?);
        lines.push('\n');
    }
    run.write_text(SCORES, &lines)
}

/// Scores, selects, closes the ledger and writes the budget and manifest.
pub fn stage_select(resolved: &ResolvedConfig, run: &RunDir) -> Result<Manifest> {
    let cfg = &resolved.config;
    let vocab = run.vocab()?;
    let student = LinearModel::load(&run.require(STUDENT)?)?;
    let quota: SelectionQuota = run.read_json(QUOTA)?;
    let scored = score_candidates(&student, run.public(CANDIDATES, &vocab)?)?;
    let mut cursor = run.cursor()?;
    let mut src = source(resolved, &vocab, &cursor)?;
    let options = SelectOptions {
        method: SelectionMethod::Discriminator,
        seed: cfg.seeds.selection,
        min_score: cfg.min_score,
    };
    let (mut dataset, scored) = select_with_refill(
        &student,
        scored,
        &quota,
        &options,
        cfg.oversample,
        src.as_mut(),
        &vocab,
        &template(resolved)?,
        &mut cursor,
    )?;
    let mut ledger = run.ledger()?;
    ledger.close();
    dataset.stamp(resolved.sigma_kd, resolved.sigma_tutor, ledger.digest());

    write_scored(run, &scored)?;
    dataset.save_jsonl(&run.path(AUGMENTED))?;
    run.write_json(LEDGER, &ledger)?;
    run.write_json(CURSOR, &cursor)?;
    let budget = write_budget(run, &ledger, cfg.report_delta)?;
    write_manifest(resolved, run, &budget, dataset.records.len())
}

fn write_budget(run: &RunDir, ledger: &AccountingLedger, delta: f64) -> Result<BudgetReport> {
    let budget = ledger.report(delta, &REPORT_EPSILON_GRID)?;
    run.write_json(BUDGET, &budget)?;
    run.write_text(BUDGET_TEXT, &budget.to_text())?;
    Ok(budget)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ResolvedConfig,
    pub augmented_records: usize,
    pub ledger_digest: String,
    pub mechanisms: Vec<(String, PrivacyBudget)>,
    pub total: PrivacyBudget,
    pub digests: Vec<(String, String)>,
}

fn write_manifest(resolved: &ResolvedConfig, run: &RunDir, budget: &BudgetReport, records: usize) -> Result<Manifest> {
    let manifest = Manifest {
        config: resolved.clone(),
        augmented_records: records,
        ledger_digest: budget.ledger_digest.clone(),
        mechanisms: budget.events.iter().map(|e| (e.mechanism.clone(), e.budget)).collect(),
        total: budget.total,
        digests: run.digests()?,
    };
    run.write_json(MANIFEST, &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(run: &RunDir) -> Result<Manifest> {
    run.read_json(MANIFEST)
}

/// Runs every stage in one process and writes all artifacts.
pub fn run_all(resolved: &ResolvedConfig, run: &RunDir) -> Result<Manifest> {
    let summary = stage_ingest(resolved, run)?;
    log::info!("ingested {} of {} private records", summary.kept, summary.read);
    let vocab = run.vocab()?;
    let private = run.private(&vocab)?;
    let template = template(resolved)?;
    let mut src = source(resolved, &vocab, &PoolCursor::default())?;
    let out = run_pipeline(resolved, private, &vocab, src.as_mut(), &template)?;

    run.write_json(SHARD_PLAN, &out.plan)?;
    out.ensemble.save(&run.path(TEACHERS))?;
    run.save_public(NEGATIVES, &out.negatives)?;
    run.save_public(DISTILL_CANDIDATES, &out.distill_candidates)?;
    out.student.save(&run.path(STUDENT))?;
    run.write_json(DISTILLATION, &out.distillation)?;
    run.write_json(TUTOR, &out.tutor)?;
    run.write_json(QUOTA, &out.quota)?;
    write_scored(run, &out.candidates)?;
    out.dataset.save_jsonl(&run.path(AUGMENTED))?;
    run.write_json(LEDGER, &out.ledger)?;
    run.write_json(CURSOR, &out.cursor)?;
    let budget = write_budget(run, &out.ledger, resolved.config.report_delta)?;
    write_manifest(resolved, run, &budget, out.dataset.records.len())
}

/// Budget report of a run directory, from its ledger alone.
pub fn account(run: &RunDir, delta: Option<f64>) -> Result<BudgetReport> {
    let ledger: AccountingLedger = run.read_json(LEDGER)?;
    let delta = match delta {
        Some(d) => d,
        None if run.path(MANIFEST).exists() => load_manifest(run)?.config.config.report_delta,
        None => 1e-6,
    };
    ledger.report(delta, &REPORT_EPSILON_GRID)
}
