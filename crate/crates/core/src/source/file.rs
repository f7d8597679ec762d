use std::collections::HashMap;
use std::path::Path;

use super::{CandidateSource, GenerationRequest};
use crate::corpus::{load_jsonl, ClassLabel, LabelVocab, Origin, PublicRecord, TextRecord};
use crate::error::{Error, Result};

/// Replays a stored corpus as generator output, in file order per label.
/// Single consumer: each record is handed out at most once.
#[derive(Debug, Clone)]
pub struct FileSource {
    by_label: HashMap<usize, Vec<PublicRecord>>,
    cursor: HashMap<usize, usize>,
}

impl FileSource {
    pub fn new(records: Vec<TextRecord>) -> Result<Self> {
        let mut by_label: HashMap<usize, Vec<PublicRecord>> = HashMap::new();
        for r in records {
            let r = r.normalized().reissued_as(Origin::Synthetic)?;
            by_label
                .entry(r.label().index)
                .or_default()
                .push(PublicRecord::try_from(r)?);
        }
        Ok(Self {
            by_label,
            cursor: HashMap::new(),
        })
    }

    pub fn open(path: &Path, vocab: &LabelVocab) -> Result<Self> {
        Self::new(load_jsonl(path, vocab)?)
    }

    pub fn remaining(&self, label: usize) -> usize {
        let total = self.by_label.get(&label).map_or(0, Vec::len);
        total - self.cursor.get(&label).copied().unwrap_or(0)
    }
}

impl CandidateSource for FileSource {
    fn next_batch(&mut self, request: &GenerationRequest) -> Result<Vec<PublicRecord>> {
        let label = request.label().index;
        if self.remaining(label) < request.count() {
            return Err(Error::Exhausted {
                label: request.label().name.clone(),
            });
        }
        let start = self.cursor.get(&label).copied().unwrap_or(0);
        let end = start + request.count();
        self.cursor.insert(label, end);
        Ok(self.by_label[&label][start..end].to_vec())
    }

    fn skip(&mut self, label: &ClassLabel, count: usize) -> Result<()> {
        if self.remaining(label.index) < count {
            return Err(Error::Exhausted {
                label: label.name.clone(),
            });
        }
        *self.cursor.entry(label.index).or_default() += count;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::DEFAULT_TEMPLATE;

    fn vocab() -> LabelVocab {
        LabelVocab::new(["cardiology", "neurology"]).unwrap()
    }

    fn corpus() -> Vec<TextRecord> {
        (0..5)
            .map(|i| TextRecord::new(format!("c{i}"), format!("Heart, text {i}"), vocab().get(0).unwrap(), Origin::Public))
            .chain(std::iter::once(TextRecord::new("n0", "brain", vocab().get(1).unwrap(), Origin::Public)))
            .collect()
    }

    #[test]
    fn serves_in_order_as_synthetic() {
        let mut s = FileSource::new(corpus()).unwrap();
        let req = GenerationRequest::new(vocab().get(0).unwrap(), 3, DEFAULT_TEMPLATE).unwrap();
        let batch = s.next_batch(&req).unwrap();
        assert_eq!(batch.iter().map(|r| r.id()).collect::<Vec<_>>(), ["c0", "c1", "c2"]);
        assert!(batch.iter().all(|r| r.origin() == Origin::Synthetic));
        assert_eq!(batch[0].text(), "heart text 0");
        let more = s.next_batch(&GenerationRequest::new(vocab().get(0).unwrap(), 2, DEFAULT_TEMPLATE).unwrap()).unwrap();
        assert_eq!(more[0].id(), "c3");
    }

    #[test]
    fn exhaustion_names_label() {
        let mut s = FileSource::new(corpus()).unwrap();
        let req = GenerationRequest::new(vocab().get(1).unwrap(), 2, DEFAULT_TEMPLATE).unwrap();
        match s.next_batch(&req) {
            Err(Error::Exhausted { label }) => assert_eq!(label, "neurology"),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.remaining(1), 1);
    }

    #[test]
    fn private_corpus_refused() {
        let recs = vec![TextRecord::new("p", "x", vocab().get(0).unwrap(), Origin::Private)];
        assert!(matches!(FileSource::new(recs), Err(Error::PrivacyViolation(_))));
    }
}
