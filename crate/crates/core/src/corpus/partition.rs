use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TextRecord;
use crate::error::{Error, Result};

/// Assignment of record ids to `shard_count` disjoint teacher shards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardPlan {
    pub shard_count: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

impl ShardPlan {
    pub fn shard_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.shard_count];
        for &s in self.assignments.values() {
            sizes[s] += 1;
        }
        sizes
    }

    /// Splits `records` by id. Every record must be in the plan and every
    /// planned id must be present exactly once. Shard contents keep the input
    /// order.
    pub fn materialize(&self, records: &[TextRecord]) -> Result<Vec<Vec<TextRecord>>> {
        super::check_unique_ids(records)?;
        if records.len() != self.assignments.len() {
            return Err(Error::Integrity(format!(
                "shard plan covers {} records but {} were supplied",
                self.assignments.len(),
                records.len()
            )));
        }
        let mut shards = vec![Vec::new(); self.shard_count];
        for r in records {
            let s = self.shard_of(r.id()).ok_or_else(|| {
                Error::Integrity(format!("record {} is not in the shard plan", r.id()))
            })?;
            shards[s].push(r.clone());
        }
        Ok(shards)
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (id, s) in &self.assignments {
            h.update(id.as_bytes());
            h.update([0]);
            h.update((*s as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Seeded Fisher–Yates shuffle, then round-robin assignment: the k-th
/// shuffled record goes to shard `k mod M`, so lower shards take the extra
/// records when the count does not divide evenly.
pub fn partition(records: &[TextRecord], shard_count: usize, seed: u64) -> Result<ShardPlan> {
    if shard_count == 0 {
        return Err(Error::invalid("shard count must be at least 1"));
    }
    if shard_count > records.len() {
        return Err(Error::invalid(format!(
            "cannot split {} records into {shard_count} nonempty shards",
            records.len()
        )));
    }
    super::check_unique_ids(records)?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let assignments = order
        .into_iter()
        .enumerate()
        .map(|(k, i)| (records[i].id().to_string(), k % shard_count))
        .collect();
    Ok(ShardPlan {
        shard_count,
        seed,
        assignments,
    })
}

/// Seeded split into (train, test) with `round(test_fraction · n)` test records.
pub fn train_test_split(
    records: &[TextRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<TextRecord>, Vec<TextRecord>)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!("test fraction {test_fraction} outside [0, 1]")));
    }
    let mut shuffled = records.to_vec();
    shuffled.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let n_test = (test_fraction * records.len() as f64).round() as usize;
    let train = shuffled.split_off(n_test);
    Ok((train, shuffled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabelVocab, Origin};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn records(n: usize) -> Vec<TextRecord> {
        let label = LabelVocab::new(["x"]).unwrap().get(0).unwrap();
        (0..n)
            .map(|i| TextRecord::new(format!("r{i}"), format!("text {i}"), label.clone(), Origin::Private))
            .collect()
    }

    #[test]
    fn even_split() {
        let plan = partition(&records(10), 2, 1).unwrap();
        assert_eq!(plan.sizes(), [5, 5]);
    }

    #[test]
    fn uneven_split_favors_low_shards() {
        let plan = partition(&records(10), 3, 1).unwrap();
        assert_eq!(plan.sizes(), [4, 3, 3]);
    }

    #[test]
    fn deterministic_given_seed() {
        let r = records(50);
        assert_eq!(partition(&r, 7, 9).unwrap(), partition(&r, 7, 9).unwrap());
        assert_ne!(partition(&r, 7, 9).unwrap(), partition(&r, 7, 10).unwrap());
    }

    #[test]
    fn too_many_shards() {
        assert!(partition(&records(3), 4, 0).is_err());
        assert!(partition(&records(3), 0, 0).is_err());
    }

    #[test]
    fn materialize_detects_foreign_records() {
        let r = records(6);
        let plan = partition(&r, 2, 0).unwrap();
        let mut other = r.clone();
        other[0] = records(7).pop().unwrap();
        assert!(matches!(plan.materialize(&other), Err(Error::Integrity(_))));
        assert!(plan.materialize(&r[..5]).is_err());
    }

    #[test]
    fn substitution_touches_one_shard() {
        let r = records(12);
        let plan = partition(&r, 4, 3).unwrap();
        let before = plan.materialize(&r).unwrap();
        let mut changed = r.clone();
        changed[5] = TextRecord::new("r5", "different text", r[5].label().clone(), Origin::Private);
        let after = plan.materialize(&changed).unwrap();
        let differing = before.iter().zip(&after).filter(|(a, b)| a != b).count();
        assert_eq!(differing, 1);
    }

    #[test]
    fn split_sizes() {
        let (train, test) = train_test_split(&records(20), 0.25, 4).unwrap();
        assert_eq!((train.len(), test.len()), (15, 5));
    }

    proptest! {
        #[test]
        fn shards_are_disjoint_balanced_and_cover(n in 1usize..200, m in 1usize..30, seed in any::<u64>()) {
            prop_assume!(m <= n);
            let r = records(n);
            let plan = partition(&r, m, seed).unwrap();
            let shards = plan.materialize(&r).unwrap();
            let mut seen = HashSet::new();
            for s in &shards {
                for rec in s {
                    prop_assert!(seen.insert(rec.id().to_string()));
                }
            }
            prop_assert_eq!(seen.len(), n);
            let sizes: Vec<usize> = shards.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
