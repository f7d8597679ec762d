use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Default hashed feature dimension, 2¹⁸.
pub const DEFAULT_DIM: usize = 1 << 18;

/// Sparse feature vector over `dim` hashed buckets; entries sorted by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn from_entries(dim: usize, mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        assert!(entries.iter().all(|&(i, v)| (i as usize) < dim && v.is_finite()));
        assert!(entries.windows(2).all(|w| w[0].0 < w[1].0), "duplicate indices");
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }
}

/// 64-bit FNV-1a.
fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Unigram and bigram counts hashed into `dim` buckets, scaled by
/// `1/√(token count)`.
///
/// Tokens are whitespace-separated. A unigram `t` hashes the bytes
/// `"u\x1f" t`; a bigram `(s, t)` hashes `"b\x1f" s "\x1f" t`; the bucket is
/// `fnv1a_64(bytes) mod dim`. Colliding features add.
pub fn featurize(text: &str, dim: usize) -> FeatureVector {
    assert!(dim > 0, "feature dimension must be positive");
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return FeatureVector::zeros(dim);
    }
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let mut bump = |h: u64| *counts.entry((h % dim as u64) as u32).or_insert(0.0) += 1.0;
    for t in &tokens {
        bump(fnv1a(&[b"u\x1f", t.as_bytes()]));
    }
    for w in tokens.windows(2) {
        bump(fnv1a(&[b"b\x1f", w[0].as_bytes(), b"\x1f", w[1].as_bytes()]));
    }
    let scale = 1.0 / (tokens.len() as f64).sqrt();
    FeatureVector {
        dim,
        entries: counts.into_iter().map(|(i, c)| (i, c * scale)).collect(),
    }
}
