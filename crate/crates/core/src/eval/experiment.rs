use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{metrics, MetricsReport};
use crate::augment::{run_pipeline, select, AugmentedDataset, PipelineOutput, SelectOptions, SelectionMethod};
use crate::config::{MechanismTarget, ResolvedConfig, RunConfig, Seeds};
use crate::corpus::{LabelVocab, TextRecord};
use crate::dp::GaussianNoise;
use crate::error::{Error, Result};
use crate::fixture::{generate, Fixture, FixtureSpec};
use crate::model::{featurize, Classifier, labeled_examples, predict_proba, train, LinearModel, TrainConfig};
use crate::pate::{aggregate_votes, noisy_label, TeacherEnsemble, PRIVATE_CLASS, PUBLIC_CLASS};
use crate::source::{FileSource, DEFAULT_TEMPLATE};
use crate::tutor::label_counts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentGrid {
    /// KD ε targets (δ from the base config) for the privacy/utility series.
    pub epsilons: Vec<f64>,
    /// Teacher counts for the ensemble-size series, run at the base KD target.
    pub teacher_counts: Vec<usize>,
    /// Augmentation sizes; the ε series runs every size.
    pub train_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            epsilons: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            teacher_counts: vec![1, 5, 10, 15, 20],
            train_sizes: vec![200],
            seeds: (0..5).collect(),
            methods: vec![Method::Private, Method::Random, Method::Ours],
        }
    }
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.train_sizes.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("experiment grid axes must be nonempty".into()));
        }
        if self.epsilons.is_empty() && self.teacher_counts.is_empty() {
            return Err(Error::Config("experiment grid needs epsilons or teacher counts".into()));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0)) || self.teacher_counts.contains(&0) {
            return Err(Error::Config("grid epsilons and teacher counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Downstream model trained on the private training set; no privacy.
    Private,
    /// Augmentation with uniform selection under the same quotas.
    Random,
    /// Augmentation with discriminator selection.
    Ours,
}

/// Everything an experiment needs besides the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fixture: FixtureSpec,
    pub base: RunConfig,
    pub downstream: TrainConfig,
    pub grid: ExperimentGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = TrainConfig {
            dim: 1 << 16,
            epochs: 20,
            ..TrainConfig::default()
        };
        Self {
            fixture: FixtureSpec::default(),
            base: RunConfig {
                queries: 400,
                n_aug: 300,
                model: model.clone(),
                ..RunConfig::default()
            },
            downstream: model,
            grid: ExperimentGrid::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamRow {
    pub epsilon: f64,
    pub train_size: usize,
    pub seed: u64,
    pub method: Method,
    pub discriminator_accuracy: Option<f64>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherRow {
    pub teachers: usize,
    pub seed: u64,
    pub teachers_accuracy: f64,
    pub teachers_noise_accuracy: f64,
    pub student_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub label: String,
    pub private: f64,
    pub tutor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub downstream: Vec<DownstreamRow>,
    pub teachers: Vec<TeacherRow>,
    pub distribution: Vec<DistributionRow>,
}

/// Held-out data for the discriminator: private test records are the
/// positive class, held-out public records the negative one.
fn discriminator_set(fixture: &Fixture) -> Vec<(&str, usize)> {
    fixture
        .test
        .iter()
        .map(|r| (r.text(), PRIVATE_CLASS))
        .chain(fixture.public_test.iter().map(|r| (r.text(), PUBLIC_CLASS)))
        .collect()
}

pub fn discriminator_accuracy(student: &LinearModel, set: &[(&str, usize)]) -> Result<f64> {
    let mut hits = 0;
    for (text, gold) in set {
        if predict_proba(student, &featurize(text, student.dim()))?.argmax() == *gold {
            hits += 1;
        }
    }
    Ok(hits as f64 / set.len() as f64)
}

/// Noiseless and noisy ensemble accuracy on the discriminator set.
fn ensemble_accuracy(ensemble: &TeacherEnsemble, set: &[(&str, usize)], sigma: f64, seed: u64) -> Result<(f64, f64)> {
    let mut noise = GaussianNoise::from_seed(seed);
    let (mut clean, mut noisy) = (0, 0);
    for (q, (text, gold)) in set.iter().enumerate() {
        let votes = aggregate_votes(ensemble, &featurize(text, ensemble.dim()))?;
        clean += usize::from(votes.noiseless_label() == *gold);
        noisy += usize::from(noisy_label(&votes, sigma, &mut noise, q)?.label.index == *gold);
    }
    let n = set.len() as f64;
    Ok((clean as f64 / n, noisy as f64 / n))
}

pub fn train_downstream(records: &[TextRecord], vocab: &LabelVocab, cfg: &TrainConfig) -> Result<LinearModel> {
    Ok(train(&labeled_examples(records, cfg.dim), vocab, cfg)?.0)
}

pub fn evaluate_downstream(model: &LinearModel, test: &[TextRecord]) -> Result<MetricsReport> {
    let mut preds = Vec::with_capacity(test.len());
    for r in test {
        preds.push(predict_proba(model, &featurize(r.text(), model.dim()))?.argmax());
    }
    let golds: Vec<usize> = test.iter().map(|r| r.label().index).collect();
    metrics(&preds, &golds, model.class_count())
}

fn augmented_records(d: &AugmentedDataset) -> Vec<TextRecord> {
    d.records.iter().map(|r| r.record().clone()).collect()
}

/// One pipeline run on the fixture.
pub fn run_point(fixture: &Fixture, resolved: &ResolvedConfig) -> Result<PipelineOutput> {
    let mut source = FileSource::new(fixture.public.clone())?;
    run_pipeline(resolved, fixture.private.clone(), &fixture.vocab, &mut source, DEFAULT_TEMPLATE)
}

fn point_config(base: &RunConfig, seed: u64, epsilon: Option<f64>, teachers: Option<usize>, n_aug: usize) -> Result<ResolvedConfig> {
    let mut cfg = base.clone();
    cfg.seeds = Seeds::from_base(seed);
    cfg.n_aug = n_aug;
    if let Some(eps) = epsilon {
        let delta = base.kd.delta.unwrap_or(1e-6);
        cfg.kd = MechanismTarget::budget(eps, delta);
    }
    if let Some(m) = teachers {
        cfg.teachers = m;
    }
    cfg.resolve()
}

fn downstream_rows(
    cfg: &ExperimentConfig,
    fixture: &Fixture,
    epsilon: f64,
    train_size: usize,
    seed: u64,
) -> Result<Vec<DownstreamRow>> {
    let resolved = point_config(&cfg.base, seed, Some(epsilon), None, train_size)?;
    let out = run_point(fixture, &resolved)?;
    let disc = discriminator_accuracy(&out.student, &discriminator_set(fixture))?;
    let downstream = TrainConfig {
        seed: resolved.config.seeds.student ^ 0x5eed,
        ..cfg.downstream.clone()
    };
    let mut rows = Vec::new();
    for &method in &cfg.grid.methods {
        let (records, disc_acc) = match method {
            Method::Private => (fixture.private.clone(), None),
            Method::Ours => (augmented_records(&out.dataset), Some(disc)),
            Method::Random => {
                let opts = SelectOptions {
                    method: SelectionMethod::Random,
                    seed: resolved.config.seeds.selection,
                    min_score: None,
                };
                (augmented_records(&select(&out.candidates, &out.quota, &opts)?), None)
            }
        };
        let model = train_downstream(&records, &fixture.vocab, &downstream)?;
        rows.push(DownstreamRow {
            epsilon,
            train_size,
            seed,
            method,
            discriminator_accuracy: disc_acc,
            metrics: evaluate_downstream(&model, &fixture.test)?,
        });
    }
    Ok(rows)
}

fn teacher_row(cfg: &ExperimentConfig, fixture: &Fixture, teachers: usize, seed: u64) -> Result<TeacherRow> {
    let size = cfg.grid.train_sizes[0];
    let resolved = point_config(&cfg.base, seed, None, Some(teachers), size)?;
    let out = run_point(fixture, &resolved)?;
    let set = discriminator_set(fixture);
    let (clean, noisy) = ensemble_accuracy(&out.ensemble, &set, resolved.sigma_kd, resolved.config.seeds.kd_noise ^ 0xe7a1)?;
    Ok(TeacherRow {
        teachers,
        seed,
        teachers_accuracy: clean,
        teachers_noise_accuracy: noisy,
        student_accuracy: discriminator_accuracy(&out.student, &set)?,
    })
}

/// Runs every grid point. Points are independent and run in parallel; the
/// report order is fixed by the grid.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.grid.validate()?;
    let fixture = generate(&cfg.fixture)?;

    let mut eps_points = Vec::new();
    for &eps in &cfg.grid.epsilons {
        for &size in &cfg.grid.train_sizes {
            for &seed in &cfg.grid.seeds {
                eps_points.push((eps, size, seed));
            }
        }
    }
    let downstream: Vec<DownstreamRow> = eps_points
        .par_iter()
        .map(|&(eps, size, seed)| downstream_rows(cfg, &fixture, eps, size, seed))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let teacher_points: Vec<(usize, u64)> = cfg
        .grid
        .teacher_counts
        .iter()
        .flat_map(|&m| cfg.grid.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let teachers = teacher_points
        .par_iter()
        .map(|&(m, s)| teacher_row(cfg, &fixture, m, s))
        .collect::<Result<Vec<_>>>()?;

    let resolved = point_config(&cfg.base, cfg.grid.seeds[0], None, None, cfg.grid.train_sizes[0])?;
    let out = run_point(&fixture, &resolved)?;
    let counts = label_counts(&fixture.private, fixture.vocab.len())?;
    let n = fixture.private.len() as f64;
    let distribution = fixture
        .vocab
        .names()
        .iter()
        .zip(counts)
        .zip(out.tutor.probs.probs())
        .map(|((label, c), &t)| DistributionRow {
            label: label.clone(),
            private: c / n,
            tutor: t,
        })
        .collect();

    Ok(ExperimentReport {
        config: cfg.clone(),
        downstream,
        teachers,
        distribution,
    })
}

#[derive(Serialize)]
struct DownstreamCsv {
    epsilon: f64,
    train_size: usize,
    seed: u64,
    method: Method,
    discriminator_accuracy: Option<f64>,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

impl ExperimentReport {
    /// Writes report.json, downstream.csv, teachers.csv and distribution.csv.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        write_csv(
            &dir.join("downstream.csv"),
            self.downstream.iter().map(|r| DownstreamCsv {
                epsilon: r.epsilon,
                train_size: r.train_size,
                seed: r.seed,
                method: r.method,
                discriminator_accuracy: r.discriminator_accuracy,
                accuracy: r.metrics.accuracy,
                precision: r.metrics.precision,
                recall: r.metrics.recall,
                f1: r.metrics.f1,
            }),
        )?;
        write_csv(&dir.join("teachers.csv"), &self.teachers)?;
        write_csv(&dir.join("distribution.csv"), &self.distribution)
    }
}
