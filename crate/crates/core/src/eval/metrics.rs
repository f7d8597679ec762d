use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Weighted,
}

/// Support-weighted classification metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub averaging: Averaging,
    pub per_class: Vec<ClassMetrics>,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class scores from the confusion matrix, averaged with gold-support
/// weights. Undefined ratios (no predictions or no golds) count as 0.
pub fn metrics(predictions: &[usize], golds: &[usize], class_count: usize) -> Result<MetricsReport> {
    if predictions.len() != golds.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} golds",
            predictions.len(),
            golds.len()
        )));
    }
    if golds.is_empty() || class_count == 0 {
        return Err(Error::invalid("metrics need at least one example and one class"));
    }
    let mut tp = vec![0usize; class_count];
    let mut predicted = vec![0usize; class_count];
    let mut support = vec![0usize; class_count];
    for (&p, &g) in predictions.iter().zip(golds) {
        if p >= class_count || g >= class_count {
            return Err(Error::invalid(format!("label outside {class_count} classes")));
        }
        predicted[p] += 1;
        support[g] += 1;
        if p == g {
            tp[g] += 1;
        }
    }
    let n = golds.len();
    let per_class: Vec<ClassMetrics> = (0..class_count)
        .map(|c| {
            let precision = ratio(tp[c], predicted[c]);
            let recall = ratio(tp[c], support[c]);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: support[c],
            }
        })
        .collect();
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / n as f64
    };
    Ok(MetricsReport {
        accuracy: ratio(tp.iter().sum(), n),
        precision: weighted(|m| m.precision),
        // Σ_c (tp_c / s_c)(s_c / n) = Σ tp_c / n, computed exactly.
        recall: ratio(tp.iter().sum(), n),
        f1: weighted(|m| m.f1),
        averaging: Averaging::Weighted,
        per_class,
        support: n,
    })
}
