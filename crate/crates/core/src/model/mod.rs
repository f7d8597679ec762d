//! Text featurization and the linear classifier used for teachers, the
//! student discriminator and the downstream task model.

mod features;
mod linear;

pub use features::{featurize, FeatureVector, DEFAULT_DIM};
pub use linear::{
    argmax, objective, predict_proba, train, Classifier, Example, LinearModel, Objective,
    ProbVector, TrainConfig, TrainReport,
};

use crate::corpus::TextRecord;

/// Featurizes records with their own class label as target.
pub fn labeled_examples(records: &[TextRecord], dim: usize) -> Vec<Example> {
    records
        .iter()
        .map(|r| Example {
            features: featurize(r.text(), dim),
            target: r.label().index,
        })
        .collect()
}
