//! Multinomial logistic regression over sparse hashed features.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::features::{FeatureVector, DEFAULT_DIM};
use crate::corpus::LabelVocab;
use crate::error::{Error, Result};

const FORMAT: &str = "dpaug-linear/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            epochs: 30,
            learning_rate: 0.5,
            l2: 1e-4,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(bytes)[..8])
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.batch_size == 0 {
            return Err(Error::invalid("dim and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::invalid("learning_rate must be > 0 and l2 >= 0"));
        }
        if self.learning_rate * self.l2 >= 1.0 {
            return Err(Error::invalid("learning_rate * l2 must be below 1"));
        }
        Ok(())
    }
}

/// A feature vector with its target class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureVector,
    pub target: usize,
}

/// Probabilities over classes; entries in [0, 1] summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates range and normalization (within 1e-9).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid(format!("not a probability vector: {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut v = vec![0.0; len];
        v[index] = 1.0;
        Self(v)
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// Anything that maps features to class probabilities. Teachers, the student
/// and the downstream classifier are all used through this interface.
pub trait Classifier {
    fn classes(&self) -> &LabelVocab;
    fn dim(&self) -> usize;
    fn predict_proba(&self, x: &FeatureVector) -> Result<ProbVector>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    classes: LabelVocab,
    dim: usize,
    /// Row-major, `classes × dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    fingerprint: String,
}

impl LinearModel {
    pub fn zeros(classes: LabelVocab, dim: usize, fingerprint: impl Into<String>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::invalid("a classifier needs at least two classes"));
        }
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        Ok(Self {
            weights: vec![0.0; classes.len() * dim],
            bias: vec![0.0; classes.len()],
            classes,
            dim,
            fingerprint: fingerprint.into(),
        })
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn scores(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        if x.dim() != self.dim {
            return Err(Error::invalid(format!(
                "feature dimension {} does not match model dimension {}",
                x.dim(),
                self.dim
            )));
        }
        Ok(self.scores_scaled(x, 1.0))
    }

    fn scores_scaled(&self, x: &FeatureVector, scale: f64) -> Vec<f64> {
        (0..self.class_count())
            .map(|c| {
                let row = &self.weights[c * self.dim..(c + 1) * self.dim];
                let dot: f64 = x.entries().iter().map(|&(j, v)| row[j as usize] * v).sum();
                scale * dot + self.bias[c]
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&StoredModel::from(self))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str::<StoredModel>(&text)?.try_into()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&StoredModel::from(self))?)
    }
}

impl Classifier for LinearModel {
    fn classes(&self) -> &LabelVocab {
        &self.classes
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn predict_proba(&self, x: &FeatureVector) -> Result<ProbVector> {
        let mut s = self.scores(x)?;
        softmax_in_place(&mut s);
        Ok(ProbVector(s))
    }
}

/// On-disk model: JSON with nonzero weights as `[class, index, value]`
/// triples in row-major order. Floats round-trip exactly.
#[derive(Serialize, Deserialize)]
struct StoredModel {
    format: String,
    dim: usize,
    classes: LabelVocab,
    fingerprint: String,
    bias: Vec<f64>,
    weights: Vec<(usize, usize, f64)>,
}

impl From<&LinearModel> for StoredModel {
    fn from(m: &LinearModel) -> Self {
        let weights = m
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0 || w.is_sign_negative())
            .map(|(k, &w)| (k / m.dim, k % m.dim, w))
            .collect();
        Self {
            format: FORMAT.into(),
            dim: m.dim,
            classes: m.classes.clone(),
            fingerprint: m.fingerprint.clone(),
            bias: m.bias.clone(),
            weights,
        }
    }
}

impl TryFrom<StoredModel> for LinearModel {
    type Error = Error;

    fn try_from(s: StoredModel) -> Result<Self> {
        if s.format != FORMAT {
            return Err(Error::invalid(format!("unsupported model format {:?}", s.format)));
        }
        let mut m = LinearModel::zeros(s.classes, s.dim, s.fingerprint)?;
        if s.bias.len() != m.class_count() {
            return Err(Error::invalid("bias length does not match class count"));
        }
        m.bias = s.bias;
        for (c, j, w) in s.weights {
            if c >= m.class_count() || j >= m.dim || !w.is_finite() {
                return Err(Error::invalid(format!("weight entry ({c}, {j}) out of range")));
            }
            m.weights[c * m.dim + j] = w;
        }
        Ok(m)
    }
}

/// Mean cross-entropy plus `l2/2 · ‖W‖²`, with its gradient.
pub struct Objective {
    pub loss: f64,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

pub fn objective(model: &LinearModel, examples: &[Example], l2: f64) -> Result<Objective> {
    if examples.is_empty() {
        return Err(Error::invalid("objective over an empty example set"));
    }
    let k = model.class_count();
    let n = examples.len() as f64;
    let mut loss = 0.0;
    let mut grad_weights: Vec<f64> = model.weights.iter().map(|w| l2 * w).collect();
    let mut grad_bias = vec![0.0; k];
    for ex in examples {
        let p = model.predict_proba(&ex.features)?.into_vec();
        loss -= p[ex.target].max(f64::MIN_POSITIVE).ln() / n;
        for c in 0..k {
            let r = (p[c] - if c == ex.target { 1.0 } else { 0.0 }) / n;
            grad_bias[c] += r;
            for &(j, v) in ex.features.entries() {
                grad_weights[c * model.dim + j as usize] += r * v;
            }
        }
    }
    loss += 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    Ok(Objective {
        loss,
        grad_weights,
        grad_bias,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Objective at initialization and after each epoch.
    pub losses: Vec<f64>,
}

/// Mini-batch gradient descent from zero initialization.
///
/// Weight decay is applied through a global scale factor so that each step
/// touches only the active features of the batch. Batch order comes from a
/// ChaCha20 shuffle seeded by `config.seed + epoch`.
pub fn train(
    examples: &[Example],
    classes: &LabelVocab,
    config: &TrainConfig,
) -> Result<(LinearModel, TrainReport)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    let k = classes.len();
    let mut present = vec![false; k];
    for ex in examples {
        if ex.target >= k {
            return Err(Error::invalid(format!("target {} outside {k} classes", ex.target)));
        }
        if ex.features.dim() != config.dim {
            return Err(Error::invalid(format!(
                "example dimension {} does not match config dimension {}",
                ex.features.dim(),
                config.dim
            )));
        }
        present[ex.target] = true;
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(Error::invalid("training data contains a single class"));
    }

    let mut model = LinearModel::zeros(classes.clone(), config.dim, config.fingerprint())?;
    let mut losses = vec![objective(&model, examples, config.l2)?.loss];
    let mut scale = 1.0f64;
    let decay = 1.0 - config.learning_rate * config.l2;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut probs = vec![0.0; k];

    for epoch in 0..config.epochs {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let step = config.learning_rate / batch.len() as f64;
            // Residuals at the pre-step parameters.
            let residuals: Vec<Vec<f64>> = batch
                .iter()
                .map(|&i| {
                    let ex = &examples[i];
                    probs.copy_from_slice(&model.scores_scaled(&ex.features, scale));
                    softmax_in_place(&mut probs);
                    probs[ex.target] -= 1.0;
                    probs.clone()
                })
                .collect();
            scale *= decay;
            for (&i, r) in batch.iter().zip(&residuals) {
                for c in 0..k {
                    model.bias[c] -= step * r[c];
                    let row = c * model.dim;
                    for &(j, v) in examples[i].features.entries() {
                        model.weights[row + j as usize] -= step * r[c] * v / scale;
                    }
                }
            }
            if scale < 1e-150 {
                model.weights.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
        }
        if scale != 1.0 {
            model.weights.iter_mut().for_each(|w| *w *= scale);
            scale = 1.0;
        }
        losses.push(objective(&model, examples, config.l2)?.loss);
    }
    Ok((model, TrainReport { losses }))
}

pub fn predict_proba(model: &LinearModel, x: &FeatureVector) -> Result<ProbVector> {
    model.predict_proba(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::featurize;
    use proptest::prelude::*;

    fn binary() -> LabelVocab {
        LabelVocab::new(["pos", "neg"]).unwrap()
    }

    fn separable(dim: usize) -> Vec<Example> {
        let mut out = Vec::new();
        for i in 0..10 {
            out.push(Example {
                features: featurize(&format!("alpha beta gamma item{i}"), dim),
                target: 0,
            });
            out.push(Example {
                features: featurize(&format!("delta epsilon zeta item{i}"), dim),
                target: 1,
            });
        }
        out
    }

    fn accuracy(model: &LinearModel, examples: &[Example]) -> f64 {
        let hits = examples
            .iter()
            .filter(|e| model.predict_proba(&e.features).unwrap().argmax() == e.target)
            .count();
        hits as f64 / examples.len() as f64
    }

    #[test]
    fn separable_fit_is_perfect_and_loss_decreases() {
        let cfg = TrainConfig {
            dim: 256,
            epochs: 20,
            ..TrainConfig::default()
        };
        let data = separable(cfg.dim);
        let (model, report) = train(&data, &binary(), &cfg).unwrap();
        assert_eq!(accuracy(&model, &data), 1.0);
        for w in report.losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", report.losses);
        }
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let cfg = TrainConfig {
            dim: 64,
            epochs: 0,
            ..TrainConfig::default()
        };
        let (model, report) = train(&separable(64), &binary(), &cfg).unwrap();
        assert_eq!(model, LinearModel::zeros(binary(), 64, cfg.fingerprint()).unwrap());
        assert_eq!(report.losses.len(), 1);
    }

    #[test]
    fn single_class_rejected() {
        let data: Vec<Example> = separable(64).into_iter().filter(|e| e.target == 0).collect();
        let cfg = TrainConfig {
            dim: 64,
            ..TrainConfig::default()
        };
        assert!(train(&data, &binary(), &cfg).is_err());
    }

    #[test]
    fn duplicated_data_same_decision_function() {
        let dim = 128;
        let data = separable(dim);
        let doubled: Vec<Example> = data.iter().chain(&data).cloned().collect();
        // Full-batch descent: the mean gradient over a doubled set equals the
        // original, so the trajectories coincide up to summation order.
        let cfg1 = TrainConfig {
            dim,
            epochs: 15,
            batch_size: data.len(),
            learning_rate: 0.3,
            l2: 1e-3,
            seed: 1,
        };
        let cfg2 = TrainConfig {
            batch_size: doubled.len(),
            ..cfg1.clone()
        };
        let (a, _) = train(&data, &binary(), &cfg1).unwrap();
        let (b, _) = train(&doubled, &binary(), &cfg2).unwrap();
        for text in ["alpha beta", "zeta delta item3", "unseen words", "gamma epsilon"] {
            let x = featurize(text, dim);
            let pa = a.predict_proba(&x).unwrap();
            let pb = b.predict_proba(&x).unwrap();
            for (u, v) in pa.probs().iter().zip(pb.probs()) {
                assert!((u - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let cfg = TrainConfig {
            dim: 512,
            epochs: 5,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let (a, _) = train(&separable(512), &binary(), &cfg).unwrap();
        let (b, _) = train(&separable(512), &binary(), &cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn predict_examples() {
        let m = LinearModel::zeros(LabelVocab::new(["a", "b", "c"]).unwrap(), 16, "").unwrap();
        let p = m.predict_proba(&featurize("x y z", 16)).unwrap();
        assert!(p.probs().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));

        let mut m = LinearModel::zeros(binary(), 16, "").unwrap();
        m.bias_mut().copy_from_slice(&[10.0, 0.0]);
        let p = m.predict_proba(&FeatureVector::zeros(16)).unwrap();
        let expected = 1.0 / (1.0 + (-10f64).exp());
        assert!((p.probs()[0] - expected).abs() < 1e-15);
        assert!((p.probs()[0] - 0.99995).abs() < 1e-5);
        assert!((p.probs()[1] - 0.0000454).abs() < 1e-6);

        assert!(m.predict_proba(&FeatureVector::zeros(8)).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn save_load_exact() {
        let cfg = TrainConfig {
            dim: 300,
            epochs: 3,
            ..TrainConfig::default()
        };
        let (m, _) = train(&separable(300), &binary(), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(LinearModel::load(&p).unwrap(), m);
    }

    fn random_model_and_data(seed: u64) -> (LinearModel, Vec<Example>) {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let classes = LabelVocab::new(["a", "b", "c", "d", "e"]).unwrap();
        let dim = 50;
        let mut m = LinearModel::zeros(classes, dim, "").unwrap();
        m.weights_mut().iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        m.bias_mut().iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        let data = (0..8)
            .map(|_| {
                let mut idx: Vec<u32> = (0..dim as u32).collect();
                idx.shuffle(&mut rng);
                let entries = idx[..6].iter().map(|&j| (j, rng.random_range(-2.0..2.0))).collect();
                Example {
                    features: FeatureVector::from_entries(dim, entries),
                    target: rng.random_range(0..5),
                }
            })
            .collect();
        (m, data)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn gradient_matches_finite_differences(seed in any::<u64>()) {
            let (m, data) = random_model_and_data(seed);
            let l2 = 0.1;
            let analytic = objective(&m, &data, l2).unwrap();
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for k in (0..m.weights().len()).step_by(7) {
                let mut plus = m.clone();
                plus.weights_mut()[k] += h;
                let mut minus = m.clone();
                minus.weights_mut()[k] -= h;
                let fd = (objective(&plus, &data, l2).unwrap().loss
                    - objective(&minus, &data, l2).unwrap().loss) / (2.0 * h);
                let g = analytic.grad_weights[k];
                worst = worst.max((fd - g).abs() / g.abs().max(1e-3));
            }
            for c in 0..m.class_count() {
                let mut plus = m.clone();
                plus.bias_mut()[c] += h;
                let mut minus = m.clone();
                minus.bias_mut()[c] -= h;
                let fd = (objective(&plus, &data, l2).unwrap().loss
                    - objective(&minus, &data, l2).unwrap().loss) / (2.0 * h);
                let g = analytic.grad_bias[c];
                worst = worst.max((fd - g).abs() / g.abs().max(1e-3));
            }
            prop_assert!(worst < 1e-4, "relative error {}", worst);
        }

        #[test]
        fn softmax_shift_invariant(shift in -50.0f64..50.0, seed in any::<u64>()) {
            let (mut m, data) = random_model_and_data(seed);
            let before = m.predict_proba(&data[0].features).unwrap();
            m.bias_mut().iter_mut().for_each(|b| *b += shift);
            let after = m.predict_proba(&data[0].features).unwrap();
            for (a, b) in before.probs().iter().zip(after.probs()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let s: f64 = after.probs().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
