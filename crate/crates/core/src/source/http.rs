use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::rate::{Clock, RateLimiter, SystemClock};
use super::{word_count, CandidateSource, GenerationRequest, SourceConfig};
use crate::corpus::{normalize, ClassLabel, Origin, PublicRecord, TextRecord};
use crate::error::{Error, Result};

/// One cache entry per generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedSample {
    pub template_digest: String,
    pub label: String,
    pub ordinal: usize,
    pub model: String,
    pub text: String,
}

/// Chat-completions client. Samples are addressed by (template digest,
/// label, ordinal); cached ordinals are served from disk without a request.
pub struct HttpSource<C: Clock = SystemClock> {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    max_tokens: u32,
    cache_dir: PathBuf,
    limiter: RateLimiter,
    clock: C,
    backoff: Duration,
    cursor: HashMap<String, usize>,
    requests: usize,
}

impl HttpSource<SystemClock> {
    pub fn from_config(cfg: &SourceConfig) -> Result<Self> {
        Self::with_clock(cfg, SystemClock::default())
    }
}

impl<C: Clock> HttpSource<C> {
    pub fn with_clock(cfg: &SourceConfig, clock: C) -> Result<Self> {
        cfg.validate()?;
        let var = cfg.api_key_env.as_deref().unwrap_or_default();
        let api_key = std::env::var(var).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("environment variable {var} is unset; sending requests without credentials");
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: cfg.endpoint.clone().unwrap_or_default(),
            model: cfg.model.clone(),
            api_key,
            max_retries: cfg.max_retries,
            max_tokens: cfg.max_tokens,
            cache_dir: cfg.cache_dir.clone().unwrap_or_default(),
            limiter: RateLimiter::per_minute(cfg.rate_limit_per_minute),
            clock,
            backoff: Duration::from_millis(500),
            cursor: HashMap::new(),
            requests: 0,
        })
    }

    /// Base delay between retries; doubles per attempt.
    pub fn set_backoff(&mut self, d: Duration) {
        self.backoff = d;
    }

    /// Outbound requests made so far.
    pub fn request_count(&self) -> usize {
        self.requests
    }

    fn entry_path(&self, digest: &str, label: &str, ordinal: usize) -> PathBuf {
        let safe: String = label
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        // Sanitizing can collide; a short hash of the raw label keeps entries apart.
        let tag = &hex::encode(Sha256::digest(label.as_bytes()))[..8];
        self.cache_dir
            .join(digest)
            .join(format!("{safe}-{tag}"))
            .join(format!("{ordinal:06}.json"))
    }

    fn sample(&mut self, request: &GenerationRequest, digest: &str, ordinal: usize) -> Result<String> {
        let label = &request.label().name;
        let path = self.entry_path(digest, label, ordinal);
        if let Some(hit) = read_cache(&path)? {
            return Ok(hit.text);
        }
        let text = self.fetch(request)?;
        let entry = CachedSample {
            template_digest: digest.to_string(),
            label: label.clone(),
            ordinal,
            model: self.model.clone(),
            text,
        };
        write_cache(&path, &entry)?;
        Ok(entry.text)
    }

    fn fetch(&mut self, request: &GenerationRequest) -> Result<String> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt()}],
            "max_tokens": self.max_tokens,
        });
        let mut last = Error::Transport {
            status: None,
            message: "no attempt made".into(),
        };
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                self.clock.sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            self.limiter.acquire(&self.clock);
            self.requests += 1;
            let mut req = self.agent.post(&self.endpoint);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = match req.send_json(&body) {
                Ok(r) => r,
                Err(e) => {
                    last = Error::Transport {
                        status: None,
                        message: e.to_string(),
                    };
                    continue;
                }
            };
            let status = resp.status().as_u16();
            if status != 200 {
                let detail = resp.body_mut().read_to_string().unwrap_or_default();
                last = Error::Transport {
                    status: Some(status),
                    message: detail.chars().take(200).collect(),
                };
                if status == 429 || status >= 500 {
                    continue;
                }
                return Err(last);
            }
            let content = resp
                .body_mut()
                .read_json::<serde_json::Value>()
                .ok()
                .and_then(|v| v["choices"][0]["message"]["content"].as_str().map(str::to_string));
            let Some(content) = content else {
                last = Error::Transport {
                    status: Some(status),
                    message: "response has no choices[0].message.content".into(),
                };
                continue;
            };
            let words = word_count(&normalize(&content));
            if words < request.min_words {
                log::warn!(
                    "rejecting {words}-word sample for {} (minimum {})",
                    request.label().name,
                    request.min_words
                );
                last = Error::Transport {
                    status: Some(status),
                    message: format!("sample too short: {words} words, minimum {}", request.min_words),
                };
                continue;
            }
            return Ok(content);
        }
        Err(last)
    }
}

impl<C: Clock> CandidateSource for HttpSource<C> {
    fn next_batch(&mut self, request: &GenerationRequest) -> Result<Vec<PublicRecord>> {
        let digest = template_digest(request.template());
        let name = request.label().name.clone();
        let start = self.cursor.get(&name).copied().unwrap_or(0);
        let mut out = Vec::with_capacity(request.count());
        for ordinal in start..start + request.count() {
            let text = self.sample(request, &digest, ordinal)?;
            let id = format!("gen-{}-{}-{ordinal}", name, &digest[..8]);
            let rec = TextRecord::new(id, text, request.label().clone(), Origin::Synthetic).normalized();
            out.push(PublicRecord::try_from(rec)?);
            self.cursor.insert(name.clone(), ordinal + 1);
        }
        Ok(out)
    }

    fn skip(&mut self, label: &ClassLabel, count: usize) -> Result<()> {
        *self.cursor.entry(label.name.clone()).or_default() += count;
        Ok(())
    }
}

pub(crate) fn template_digest(template: &str) -> String {
    hex::encode(Sha256::digest(template.as_bytes()))
}

fn read_cache(path: &Path) -> Result<Option<CachedSample>> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn write_cache(path: &Path, entry: &CachedSample) -> Result<()> {
    let dir = path.parent().expect("cache entry has a parent directory");
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    serde_json::to_writer_pretty(&mut tmp, entry)?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabelVocab;
    use crate::source::{MockClock, SourceKind, DEFAULT_TEMPLATE};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};

    /// Minimal HTTP/1.1 server answering each request with the next scripted
    /// (status, body) pair, repeating the last one when the script runs out.
    struct Stub {
        url: String,
        hits: Arc<AtomicUsize>,
        bodies: Arc<Mutex<Vec<String>>>,
    }

    fn stub(script: Vec<(u16, String)>) -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let (h, b) = (hits.clone(), bodies.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let l = line.trim_end().to_ascii_lowercase();
                    if l.is_empty() {
                        break;
                    }
                    if let Some(v) = l.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                b.lock().unwrap().push(String::from_utf8(body).unwrap());
                let n = h.fetch_add(1, Ordering::SeqCst);
                let (status, reply) = script[n.min(script.len() - 1)].clone();
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                    reply.len()
                );
            }
        });
        Stub { url, hits, bodies }
    }

    fn completion(words: usize) -> String {
        let text: Vec<String> = (0..words).map(|i| format!("Word{i}.")).collect();
        json!({"choices": [{"message": {"role": "assistant", "content": text.join(" ")}}]}).to_string()
    }

    fn config(url: &str, cache: &Path) -> SourceConfig {
        SourceConfig {
            kind: SourceKind::Http,
            endpoint: Some(url.into()),
            api_key_env: Some("DPAUG_TEST_KEY_UNSET".into()),
            cache_dir: Some(cache.into()),
            max_retries: 2,
            timeout_secs: 10,
            ..SourceConfig::default()
        }
    }

    fn request(count: usize) -> GenerationRequest {
        let label = LabelVocab::new(["Cardiovascular / Pulmonary"]).unwrap().get(0).unwrap();
        GenerationRequest::new(label, count, DEFAULT_TEMPLATE).unwrap()
    }

    #[test]
    fn warm_cache_makes_no_requests() {
        let server = stub(vec![(200, completion(250))]);
        let cache = tempfile::tempdir().unwrap();
        let cfg = config(&server.url, cache.path());
        let mut cold = HttpSource::with_clock(&cfg, MockClock::default()).unwrap();
        let first = cold.next_batch(&request(3)).unwrap();
        assert_eq!(cold.request_count(), 3);
        assert_eq!(server.hits.load(Ordering::SeqCst), 3);
        let sent: serde_json::Value = serde_json::from_str(&server.bodies.lock().unwrap()[0]).unwrap();
        assert_eq!(sent["model"], "gpt-3.5-turbo");
        assert!(sent["messages"][0]["content"]
            .as_str()
            .unwrap()
            .contains("for Cardiovascular / Pulmonary and"));

        let mut warm = HttpSource::with_clock(&cfg, MockClock::default()).unwrap();
        let second = warm.next_batch(&request(3)).unwrap();
        assert_eq!(warm.request_count(), 0);
        assert_eq!(server.hits.load(Ordering::SeqCst), 3);
        assert_eq!(first, second);
        assert!(second.iter().all(|r| r.origin() == Origin::Synthetic));
        assert_eq!(word_count(second[0].text()), 250);
        assert!(second[0].text().starts_with("word0 word1"));
    }

    #[test]
    fn short_reply_is_retried() {
        let server = stub(vec![(200, completion(120)), (200, completion(230))]);
        let cache = tempfile::tempdir().unwrap();
        let mut src = HttpSource::with_clock(&config(&server.url, cache.path()), MockClock::default()).unwrap();
        let batch = src.next_batch(&request(1)).unwrap();
        assert_eq!(server.hits.load(Ordering::SeqCst), 2);
        assert_eq!(word_count(batch[0].text()), 230);
    }

    #[test]
    fn retries_exhausted_reports_last_status() {
        let server = stub(vec![(500, "{}".into()), (503, "{}".into())]);
        let cache = tempfile::tempdir().unwrap();
        let mut src = HttpSource::with_clock(&config(&server.url, cache.path()), MockClock::default()).unwrap();
        match src.next_batch(&request(1)) {
            Err(Error::Transport { status, .. }) => assert_eq!(status, Some(503)),
            other => panic!("{other:?}"),
        }
        assert_eq!(server.hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_error_not_retried() {
        let server = stub(vec![(401, "{}".into())]);
        let cache = tempfile::tempdir().unwrap();
        let mut src = HttpSource::with_clock(&config(&server.url, cache.path()), MockClock::default()).unwrap();
        assert!(matches!(
            src.next_batch(&request(1)),
            Err(Error::Transport { status: Some(401), .. })
        ));
        assert_eq!(server.hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn short_replies_use_up_retry_budget() {
        let server = stub(vec![(200, completion(120))]);
        let cache = tempfile::tempdir().unwrap();
        let mut src = HttpSource::with_clock(&config(&server.url, cache.path()), MockClock::default()).unwrap();
        assert!(matches!(src.next_batch(&request(1)), Err(Error::Transport { .. })));
        assert_eq!(server.hits.load(Ordering::SeqCst), 3);
        assert_eq!(std::fs::read_dir(cache.path()).unwrap().count(), 0);
    }
}
