//! AdaBoost over axis-aligned decision stumps.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::dataset::GroupedDataset;

/// One threshold rule: predicts `polarity` where `x[feature] >= threshold`
/// and the opposite sign below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    feature: usize,
    threshold: f64,
    polarity: i8,
}

impl Stump {
    fn predict(&self, x: ArrayView1<'_, f64>) -> f64 {
        if x[self.feature] >= self.threshold {
            self.polarity as f64
        } else {
            -self.polarity as f64
        }
    }
}

/// Weighted vote over stumps: `f(x) = sum_t alpha_t h_t(x)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaboostModel {
    stumps: Vec<Stump>,
    alphas: Vec<f64>,
    dim: usize,
}

impl AdaboostModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn decision_value(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.stumps
            .iter()
            .zip(self.alphas.iter())
            .map(|(s, a)| a * s.predict(x))
            .sum()
    }

    pub fn rounds_used(&self) -> usize {
        self.stumps.len()
    }
}

/// Error probabilities are clamped away from 0 and 1 so the vote weights
/// stay finite.
const EPSILON_CLAMP: f64 = 1e-10;

/// The best stump for the current distribution, found by scanning every
/// boundary between distinct sorted values of every feature with prefix
/// sums. Deterministic: ties keep the first candidate in (feature,
/// threshold) order.
fn best_stump(ds: &GroupedDataset, dist: &[f64], sorted_by_feature: &[Vec<usize>]) -> (Stump, f64) {
    let n = ds.n();
    let mut best: Option<(f64, Stump)> = None;
    for (feature, order) in sorted_by_feature.iter().enumerate() {
        // prefix_pos[k]: distribution mass of positive samples among the k
        // smallest values.
        let mut prefix_pos = vec![0.0; n + 1];
        let mut prefix_neg = vec![0.0; n + 1];
        for (k, &i) in order.iter().enumerate() {
            let (dp, dn) = if ds.labels()[i] == 1 {
                (dist[i], 0.0)
            } else {
                (0.0, dist[i])
            };
            prefix_pos[k + 1] = prefix_pos[k] + dp;
            prefix_neg[k + 1] = prefix_neg[k] + dn;
        }
        let total_neg = prefix_neg[n];
        // Candidate boundaries: before everything, and between each pair of
        // distinct consecutive values.
        for k in 0..n {
            let threshold = if k == 0 {
                ds.features()[(order[0], feature)] - 1.0
            } else {
                let lo = ds.features()[(order[k - 1], feature)];
                let hi = ds.features()[(order[k], feature)];
                if lo == hi {
                    continue;
                }
                0.5 * (lo + hi)
            };
            // Polarity +1 predicts positive at and above the threshold:
            // errors are negatives above plus positives below.
            let err_pos = (total_neg - prefix_neg[k]) + prefix_pos[k];
            let (err, polarity) = if err_pos <= 1.0 - err_pos {
                (err_pos, 1)
            } else {
                (1.0 - err_pos, -1)
            };
            let candidate = Stump {
                feature,
                threshold,
                polarity,
            };
            if best.as_ref().map(|(e, _)| err < *e).unwrap_or(true) {
                best = Some((err, candidate));
            }
        }
    }
    let (err, stump) = best.expect("at least one candidate boundary exists");
    (stump, err)
}

pub(super) fn fit(ds: &GroupedDataset, sample_weights: &[f64], rounds: usize) -> AdaboostModel {
    let n = ds.n();
    let total: f64 = sample_weights.iter().sum();
    let mut dist: Vec<f64> = sample_weights.iter().map(|w| w / total).collect();

    // Sorting each feature once is enough: the order never changes, only
    // the distribution does.
    let sorted_by_feature: Vec<Vec<usize>> = (0..ds.dim())
        .map(|j| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| {
                ds.features()[(a, j)]
                    .partial_cmp(&ds.features()[(b, j)])
                    .expect("dataset features are finite")
            });
            idx
        })
        .collect();

    let mut stumps = Vec::new();
    let mut alphas = Vec::new();
    for _ in 0..rounds {
        let (stump, err) = best_stump(ds, &dist, &sorted_by_feature);
        if err >= 0.5 {
            // No stump beats chance on this distribution; adding one would
            // get non-positive weight.
            break;
        }
        let clamped = err.clamp(EPSILON_CLAMP, 1.0 - EPSILON_CLAMP);
        let alpha = 0.5 * ((1.0 - clamped) / clamped).ln();
        stumps.push(stump);
        alphas.push(alpha);
        if err <= EPSILON_CLAMP {
            // Perfect stump: the re-weighting would degenerate.
            break;
        }
        let mut z = 0.0;
        for i in 0..n {
            let h = stump.predict(ds.row(i));
            dist[i] *= (-alpha * ds.labels()[i] as f64 * h).exp();
            z += dist[i];
        }
        for d in dist.iter_mut() {
            *d /= z;
        }
    }
    AdaboostModel {
        stumps,
        alphas,
        dim: ds.dim(),
    }
}
