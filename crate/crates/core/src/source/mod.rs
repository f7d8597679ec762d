//! Label-conditioned candidate samples: an offline file-backed source and a
//! chat-completions HTTP client with an on-disk cache.

mod file;
mod http;
mod rate;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{ClassLabel, LabelVocab, PublicRecord};
use crate::error::{Error, Result};

pub use file::FileSource;
pub use http::{HttpSource, CachedSample};
pub use rate::{Clock, MockClock, RateLimiter, SystemClock};

pub const LABEL_PLACEHOLDER: &str = "[LABEL]";

/// Prompt used when no template file is given.
pub const DEFAULT_TEMPLATE: &str = "You are a professional medical transcriber. Please generate a \
medical transcription for [LABEL] and do not reveal the patient's name. The text length of \
medical transcription is approximately 400 words and at least 200 words.";

pub const DEFAULT_TARGET_WORDS: usize = 400;
pub const DEFAULT_MIN_WORDS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    label: ClassLabel,
    count: usize,
    template: String,
    pub target_words: usize,
    pub min_words: usize,
}

impl GenerationRequest {
    pub fn new(label: ClassLabel, count: usize, template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        if count == 0 {
            return Err(Error::invalid("generation request count must be positive"));
        }
        let n = template.matches(LABEL_PLACEHOLDER).count();
        if n != 1 {
            return Err(Error::invalid(format!(
                "prompt template must contain exactly one {LABEL_PLACEHOLDER}, found {n}"
            )));
        }
        Ok(Self {
            label,
            count,
            template,
            target_words: DEFAULT_TARGET_WORDS,
            min_words: DEFAULT_MIN_WORDS,
        })
    }

    pub fn label(&self) -> &ClassLabel {
        &self.label
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn prompt(&self) -> String {
        self.template.replace(LABEL_PLACEHOLDER, &self.label.name)
    }
}

pub trait CandidateSource {
    /// Exactly `request.count()` normalized records labeled
    /// `request.label()`, origin synthetic.
    fn next_batch(&mut self, request: &GenerationRequest) -> Result<Vec<PublicRecord>>;

    /// Discards the next `count` samples of `label`. Used to resume a source
    /// whose earlier output was consumed by another process.
    fn skip(&mut self, label: &ClassLabel, count: usize) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    #[default]
    File,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    pub kind: SourceKind,
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub cache_dir: Option<PathBuf>,
    pub rate_limit_per_minute: u32,
    pub max_tokens: u32,
    pub template_file: Option<PathBuf>,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            kind: SourceKind::File,
            endpoint: None,
            model: "gpt-3.5-turbo".into(),
            api_key_env: None,
            timeout_secs: 60,
            max_retries: 3,
            cache_dir: None,
            rate_limit_per_minute: 60,
            max_tokens: 4096,
            template_file: None,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SourceKind::File => {}
            SourceKind::Http => {
                if self.endpoint.is_none() {
                    return Err(Error::Config("http source needs an endpoint".into()));
                }
                match &self.api_key_env {
                    None => return Err(Error::Config("http source needs api_key_env".into())),
                    Some(name) if name.is_empty() || name.starts_with("sk-") || name.contains(' ') => {
                        return Err(Error::Config(
                            "api_key_env must name an environment variable, not hold a secret".into(),
                        ))
                    }
                    _ => {}
                }
                if self.cache_dir.is_none() {
                    return Err(Error::Config("http source needs a cache directory".into()));
                }
                if self.rate_limit_per_minute == 0 {
                    return Err(Error::Config("rate limit must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn template(&self) -> Result<String> {
        match &self.template_file {
            Some(p) => std::fs::read_to_string(p)
                .map(|s| s.trim().to_string())
                .map_err(|e| Error::io(p, e)),
            None => Ok(DEFAULT_TEMPLATE.to_string()),
        }
    }
}

/// Builds the configured source. The file source replays `corpus`.
pub fn open_source(
    cfg: &SourceConfig,
    corpus: Option<&Path>,
    vocab: &LabelVocab,
) -> Result<Box<dyn CandidateSource + Send>> {
    cfg.validate()?;
    match cfg.kind {
        SourceKind::File => {
            let path = corpus.ok_or_else(|| Error::Config("file source needs a public corpus path".into()))?;
            Ok(Box::new(FileSource::open(path, vocab)?))
        }
        SourceKind::Http => Ok(Box::new(HttpSource::from_config(cfg)?)),
    }
}

/// Whitespace-delimited word count of the normalized text.
pub fn word_count(normalized: &str) -> usize {
    normalized.split_whitespace().count()
}
