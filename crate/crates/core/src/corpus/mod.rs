//! Labeled text records, ingestion, deduplication and teacher shards.

mod jsonl;
mod normalize;
mod partition;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use jsonl::{
    load_jsonl, load_private_jsonl, load_vocab, save_jsonl, save_vocab, set_private_access_hook,
};
pub use normalize::normalize;
pub use partition::{partition, train_test_split, ShardPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Private,
    Public,
    Synthetic,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Private => "private",
            Origin::Public => "public",
            Origin::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassLabel {
    pub index: usize,
    pub name: String,
}

/// Ordered class names; a label's index is its position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelVocab {
    names: Vec<String>,
}

impl LabelVocab {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::invalid("label vocabulary is empty"));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::invalid(format!("duplicate label {n:?} in vocabulary")));
            }
        }
        Ok(Self { names })
    }

    /// The discriminator's two classes: 0 = private, 1 = public.
    pub fn discriminator() -> Self {
        Self {
            names: vec!["private".into(), "public".into()],
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, index: usize) -> Option<ClassLabel> {
        self.names.get(index).map(|name| ClassLabel {
            index,
            name: name.clone(),
        })
    }

    pub fn label(&self, name: &str) -> Result<ClassLabel> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|index| ClassLabel {
                index,
                name: name.to_string(),
            })
            .ok_or_else(|| Error::UnknownLabel {
                name: name.to_string(),
                vocabulary: self.names.clone(),
            })
    }

    pub fn labels(&self) -> impl Iterator<Item = ClassLabel> + '_ {
        (0..self.names.len()).map(|i| self.get(i).unwrap())
    }
}

/// One labeled sample. The origin is fixed at construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TextRecord {
    id: String,
    text: String,
    label: ClassLabel,
    origin: Origin,
}

impl TextRecord {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        label: ClassLabel,
        origin: Origin,
    ) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
            origin,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn label(&self) -> &ClassLabel {
        &self.label
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn normalized(mut self) -> Self {
        self.text = normalize(&self.text);
        self
    }

    /// Same text and id, different origin. Used when a file corpus is
    /// replayed as generator output.
    pub fn reissued_as(self, origin: Origin) -> Result<Self> {
        if self.origin == Origin::Private && origin != Origin::Private {
            return Err(Error::PrivacyViolation(format!(
                "record {} is private and cannot be reissued as {origin}",
                self.id
            )));
        }
        Ok(Self { origin, ..self })
    }
}

/// A record statically known not to be private.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PublicRecord(TextRecord);

impl PublicRecord {
    pub fn record(&self) -> &TextRecord {
        &self.0
    }

    pub fn into_inner(self) -> TextRecord {
        self.0
    }
}

impl TryFrom<TextRecord> for PublicRecord {
    type Error = Error;

    fn try_from(r: TextRecord) -> Result<Self> {
        match r.origin {
            Origin::Private => Err(Error::PrivacyViolation(format!(
                "record {} has origin=private",
                r.id
            ))),
            _ => Ok(Self(r)),
        }
    }
}

impl std::ops::Deref for PublicRecord {
    type Target = TextRecord;

    fn deref(&self) -> &TextRecord {
        &self.0
    }
}

pub fn to_public(records: Vec<TextRecord>) -> Result<Vec<PublicRecord>> {
    records.into_iter().map(PublicRecord::try_from).collect()
}

/// Keeps the first occurrence of each (text, label) pair. Assumes
/// normalized text.
pub fn dedup(records: Vec<TextRecord>) -> Vec<TextRecord> {
    let mut seen = HashSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert((r.text.clone(), r.label.index)))
        .collect()
}

/// Normalizes, drops records whose text normalizes to nothing, then dedups.
pub fn ingest(records: Vec<TextRecord>) -> Vec<TextRecord> {
    let normalized: Vec<TextRecord> = records
        .into_iter()
        .map(TextRecord::normalized)
        .filter(|r| {
            if r.text.is_empty() {
                log::warn!("dropping record {}: empty after normalization", r.id);
                false
            } else {
                true
            }
        })
        .collect();
    dedup(normalized)
}

pub fn check_unique_ids(records: &[TextRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Integrity(format!("duplicate record id {}", r.id)));
        }
    }
    Ok(())
}

pub fn ingest_file(path: &Path, vocab: &LabelVocab) -> Result<Vec<TextRecord>> {
    Ok(ingest(load_jsonl(path, vocab)?))
}
