//! Run configuration: one TOML document, resolved into concrete noise
//! scales before any stage runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dp::{calibrate_sigma, PrivacyBudget, PROBABILITY_SUM_SENSITIVITY};
use crate::error::{Error, Result};
use crate::model::TrainConfig;
use crate::source::SourceConfig;

/// Either an explicit noise scale or an (ε, δ) target to calibrate to.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismTarget {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl MechanismTarget {
    pub fn budget(epsilon: f64, delta: f64) -> Self {
        Self {
            sigma: None,
            epsilon: Some(epsilon),
            delta: Some(delta),
        }
    }

    pub fn sigma(sigma: f64) -> Self {
        Self {
            sigma: Some(sigma),
            epsilon: None,
            delta: None,
        }
    }

    /// Noise scale for a release of the given total L2 sensitivity.
    pub fn resolve(&self, name: &str, sensitivity: f64) -> Result<f64> {
        match (self.sigma, self.epsilon, self.delta) {
            (Some(s), None, None) if s > 0.0 && s.is_finite() => Ok(s),
            (Some(s), None, None) => Err(Error::Config(format!("{name}.sigma must be positive, got {s}"))),
            (None, Some(e), Some(d)) => calibrate_sigma(PrivacyBudget::new(e, d)?, sensitivity)
                .map_err(|err| Error::Config(format!("{name}: {err}"))),
            (Some(_), _, _) => Err(Error::Config(format!(
                "{name}: give either sigma or (epsilon, delta), not both"
            ))),
            _ => Err(Error::Config(format!(
                "{name}: need sigma or both epsilon and delta"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Private corpus JSONL.
    pub private: Option<PathBuf>,
    /// Public corpus replayed by the file source.
    pub public: Option<PathBuf>,
    /// Label vocabulary JSON.
    pub vocab: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            private: None,
            public: None,
            vocab: None,
            out: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub partition: u64,
    pub teachers: u64,
    pub kd_noise: u64,
    pub student: u64,
    pub tutor_noise: u64,
    pub selection: u64,
}

impl Seeds {
    /// Distinct seeds derived from one base value.
    pub fn from_base(base: u64) -> Self {
        let s = |k: u64| base.wrapping_mul(1000).wrapping_add(k);
        Self {
            partition: s(1),
            teachers: s(2),
            kd_noise: s(3),
            student: s(4),
            tutor_noise: s(5),
            selection: s(6),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Self::from_base(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub teachers: usize,
    /// Teacher queries spent on distillation.
    pub queries: usize,
    /// Public negatives for teacher training; defaults to the private size.
    pub negatives: Option<usize>,
    /// Augmented samples to emit.
    pub n_aug: usize,
    /// Candidates requested per quota slot.
    pub oversample: usize,
    pub min_score: Option<f64>,
    /// Also offer the distillation candidates for selection.
    pub merge_pools: bool,
    pub kd: MechanismTarget,
    pub tutor: MechanismTarget,
    /// δ at which the budget report states ε.
    pub report_delta: f64,
    /// Draw privacy noise from OS entropy. Disables reproducibility.
    pub secure_noise: bool,
    pub seeds: Seeds,
    pub model: TrainConfig,
    pub source: SourceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            teachers: 15,
            queries: 400,
            negatives: None,
            n_aug: 200,
            oversample: 4,
            min_score: None,
            merge_pools: false,
            kd: MechanismTarget::budget(4.0, 1e-6),
            tutor: MechanismTarget::budget(0.4, 1e-6),
            report_delta: 1e-6,
            secure_noise: false,
            seeds: Seeds::default(),
            model: TrainConfig::default(),
            source: SourceConfig::default(),
        }
    }
}

/// A config with both noise scales fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    pub sigma_kd: f64,
    pub sigma_tutor: f64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML config, or a run manifest whose `config` section is
    /// reused verbatim. Relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text)?;
            let section = v
                .get("config")
                .and_then(|c| c.get("config"))
                .ok_or_else(|| Error::Config(format!("{} has no config section", path.display())))?;
            serde_json::from_value(section.clone()).map_err(|e| Error::Config(e.to_string()))?
        } else {
            Self::from_toml(&text)?
        };
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let base = std::path::absolute(base).map_err(|e| Error::io(base, e))?;
        cfg.rebase(&base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.paths.private, &mut self.paths.public, &mut self.paths.vocab]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.paths.out);
        for p in [&mut self.source.cache_dir, &mut self.source.template_file]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.teachers == 0 {
            return Err(Error::Config("teachers must be at least 1".into()));
        }
        if self.queries == 0 || self.n_aug == 0 || self.oversample == 0 {
            return Err(Error::Config("queries, n_aug and oversample must be positive".into()));
        }
        if !(self.report_delta > 0.0 && self.report_delta < 1.0) {
            return Err(Error::Config("report_delta must lie in (0, 1)".into()));
        }
        if self.negatives == Some(0) {
            return Err(Error::Config("negatives must be positive".into()));
        }
        self.source.validate()
    }

    /// Fixes σ_KD and σ_tutor. An (ε, δ) target for KD covers all
    /// `queries` releases together, i.e. sensitivity √2·√Q.
    pub fn resolve(self) -> Result<ResolvedConfig> {
        self.validate()?;
        let q = self.queries as f64;
        let sigma_kd = self.kd.resolve("kd", PROBABILITY_SUM_SENSITIVITY * q.sqrt())?;
        let sigma_tutor = self.tutor.resolve("tutor", PROBABILITY_SUM_SENSITIVITY)?;
        Ok(ResolvedConfig {
            config: self,
            sigma_kd,
            sigma_tutor,
        })
    }
}
