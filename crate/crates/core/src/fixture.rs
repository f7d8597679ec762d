//! Seeded synthetic corpora with a private domain and a noisier public
//! "generator" domain, for tests and desk-scale experiments.
//!
//! Every document mixes topic words of its class, style words of its domain
//! and common filler. Public documents are either in-domain (drawn exactly
//! like private ones) or off-domain (public style, and with probability
//! `label_noise` about a different topic than their label claims).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{save_jsonl, save_vocab, LabelVocab, Origin, TextRecord};
use crate::error::{Error, Result};

const STEMS: [&str; 12] = [
    "cardio", "neuro", "ortho", "gastro", "derma", "onco", "pulmo", "nephro", "hepato", "ophtho",
    "uro", "psych",
];
const TOPIC_WORDS: usize = 15;
const STYLE_WORDS: usize = 120;
const COMMON_WORDS: usize = 150;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub classes: usize,
    /// Private training records for the most frequent class; class `c`
    /// gets roughly `private_per_class / (1 + c/2)`.
    pub private_per_class: usize,
    pub test_per_class: usize,
    pub public_per_class: usize,
    /// Held-out public records for measuring the discriminator.
    pub public_test: usize,
    pub in_domain_fraction: f64,
    pub label_noise: f64,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            classes: 6,
            private_per_class: 80,
            test_per_class: 40,
            public_per_class: 500,
            public_test: 300,
            in_domain_fraction: 0.3,
            label_noise: 0.6,
            min_words: 30,
            max_words: 60,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub vocab: LabelVocab,
    pub private: Vec<TextRecord>,
    /// Held-out private records; downstream and discriminator test data.
    pub test: Vec<TextRecord>,
    pub public: Vec<TextRecord>,
    pub public_test: Vec<TextRecord>,
}

#[derive(Clone, Copy)]
enum Domain {
    Private,
    Public,
}

struct Writer<'a> {
    spec: &'a FixtureSpec,
    rng: ChaCha20Rng,
}

impl Writer<'_> {
    /// Skewed index in `0..n`, small values most likely.
    fn skewed(&mut self, n: usize) -> usize {
        let u: f64 = self.rng.random();
        ((u * u) * n as f64) as usize
    }

    fn document(&mut self, topic: usize, domain: Domain) -> String {
        let len = self.rng.random_range(self.spec.min_words..=self.spec.max_words);
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            let roll: f64 = self.rng.random();
            let w = if roll < 0.22 {
                format!("{}{}", STEMS[topic % STEMS.len()], topic_suffix(topic, self.skewed(TOPIC_WORDS)))
            } else if roll < 0.27 {
                let other = self.rng.random_range(0..self.spec.classes);
                format!("{}{}", STEMS[other % STEMS.len()], topic_suffix(other, self.skewed(TOPIC_WORDS)))
            } else if roll < 0.62 {
                let prefix = match domain {
                    Domain::Private => "pt",
                    Domain::Public => "gen",
                };
                format!("{prefix}{}", self.skewed(STYLE_WORDS))
            } else {
                format!("w{}", self.skewed(COMMON_WORDS))
            };
            words.push(w);
        }
        let mut text = words.join(" ");
        text.push('.');
        text
    }

    fn public_record(&mut self, id: String, label: usize, vocab: &LabelVocab) -> TextRecord {
        let text = if self.rng.random_bool(self.spec.in_domain_fraction) {
            self.document(label, Domain::Private)
        } else {
            let topic = if self.spec.classes > 1 && self.rng.random_bool(self.spec.label_noise) {
                (label + self.rng.random_range(1..self.spec.classes)) % self.spec.classes
            } else {
                label
            };
            self.document(topic, Domain::Public)
        };
        TextRecord::new(id, text, vocab.get(label).unwrap(), Origin::Public)
    }
}

fn topic_suffix(class: usize, k: usize) -> String {
    // Classes beyond the stem list reuse stems with a distinct suffix.
    if class < STEMS.len() {
        format!("{k}")
    } else {
        format!("{}x{k}", class / STEMS.len())
    }
}

pub fn class_names(classes: usize) -> Vec<String> {
    (0..classes)
        .map(|c| {
            let stem = STEMS[c % STEMS.len()];
            if c < STEMS.len() {
                format!("{stem}logy")
            } else {
                format!("{stem}logy-{}", c / STEMS.len())
            }
        })
        .collect()
}

pub fn generate(spec: &FixtureSpec) -> Result<Fixture> {
    if spec.classes < 2 || spec.private_per_class == 0 || spec.public_per_class == 0 {
        return Err(Error::invalid("fixture needs at least two classes and nonempty corpora"));
    }
    if spec.min_words == 0 || spec.min_words > spec.max_words {
        return Err(Error::invalid("fixture word range is empty"));
    }
    for p in [spec.in_domain_fraction, spec.label_noise] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid("fixture fractions must lie in [0, 1]"));
        }
    }
    let vocab = LabelVocab::new(class_names(spec.classes))?;
    let mut w = Writer {
        spec,
        rng: ChaCha20Rng::seed_from_u64(spec.seed),
    };

    let mut private = Vec::new();
    let mut test = Vec::new();
    for c in 0..spec.classes {
        let n = ((spec.private_per_class as f64) / (1.0 + c as f64 / 2.0)).round().max(1.0) as usize;
        for i in 0..n {
            let text = w.document(c, Domain::Private);
            private.push(TextRecord::new(format!("p{c:02}-{i:04}"), text, vocab.get(c).unwrap(), Origin::Private));
        }
        for i in 0..spec.test_per_class {
            let text = w.document(c, Domain::Private);
            test.push(TextRecord::new(format!("t{c:02}-{i:04}"), text, vocab.get(c).unwrap(), Origin::Private));
        }
    }
    let mut public = Vec::new();
    for i in 0..spec.public_per_class {
        for c in 0..spec.classes {
            public.push(w.public_record(format!("g{c:02}-{i:05}"), c, &vocab));
        }
    }
    let public_test = (0..spec.public_test)
        .map(|i| {
            let c = i % spec.classes;
            w.public_record(format!("h{c:02}-{i:05}"), c, &vocab)
        })
        .collect();
    Ok(Fixture {
        vocab,
        private,
        test,
        public,
        public_test,
    })
}

impl Fixture {
    /// Writes vocab.json, private.jsonl, test.jsonl, public.jsonl and
    /// public_test.jsonl into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_vocab(&self.vocab, &dir.join("vocab.json"))?;
        save_jsonl(&self.private, &dir.join("private.jsonl"))?;
        save_jsonl(&self.test, &dir.join("test.jsonl"))?;
        save_jsonl(&self.public, &dir.join("public.jsonl"))?;
        save_jsonl(&self.public_test, &dir.join("public_test.jsonl"))?;
        Ok(())
    }
}
