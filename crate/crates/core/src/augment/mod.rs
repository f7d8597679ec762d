//! Candidate scoring, quota apportionment and selection, plus the
//! end-to-end pipeline that ties every stage together.

mod pipeline;
mod select;

pub use pipeline::*;
pub use select::{
    apportion, quotas, score_candidates, select, AugmentedDataset, Provenance, ScoredCandidate,
    SelectOptions, SelectionMethod, SelectionQuota,
};
