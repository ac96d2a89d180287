//! Random forest over weighted bootstrap samples.

use ndarray::ArrayView1;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::GroupedDataset;
use crate::seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Leaf {
        label: i8,
    },
    Split {
        feature: usize,
        threshold: f64,
        /// Samples with `x[feature] < threshold`.
        below: Box<Node>,
        /// Samples with `x[feature] >= threshold`.
        above: Box<Node>,
    },
}

impl Node {
    fn predict(&self, x: ArrayView1<'_, f64>) -> i8 {
        match self {
            Node::Leaf { label } => *label,
            Node::Split {
                feature,
                threshold,
                below,
                above,
            } => {
                if x[*feature] < *threshold {
                    below.predict(x)
                } else {
                    above.predict(x)
                }
            }
        }
    }
}

/// Majority vote over depth-capped trees.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<Node>,
    dim: usize,
}

impl ForestModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mean vote in `[-1, 1]`.
    pub fn decision_value(&self, x: ArrayView1<'_, f64>) -> f64 {
        let sum: i64 = self.trees.iter().map(|t| t.predict(x) as i64).sum();
        sum as f64 / self.trees.len() as f64
    }
}

/// Gini impurity of a (positive, negative) count pair.
fn gini(pos: usize, neg: usize) -> f64 {
    let n = (pos + neg) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = pos as f64 / n;
    let q = neg as f64 / n;
    1.0 - p * p - q * q
}

/// The leaf label for a sample multiset: majority, ties positive.
fn majority(ds: &GroupedDataset, idxs: &[usize]) -> i8 {
    let pos = idxs.iter().filter(|&&i| ds.labels()[i] == 1).count();
    if 2 * pos >= idxs.len() {
        1
    } else {
        -1
    }
}

fn grow(
    ds: &GroupedDataset,
    idxs: &[usize],
    depth: usize,
    max_depth: usize,
    mtry: usize,
    rng: &mut ChaCha8Rng,
) -> Node {
    let pos = idxs.iter().filter(|&&i| ds.labels()[i] == 1).count();
    if depth == max_depth || pos == 0 || pos == idxs.len() || idxs.len() < 2 {
        return Node::Leaf {
            label: majority(ds, idxs),
        };
    }

    // Sample `mtry` distinct candidate features.
    let d = ds.dim();
    let mut features: Vec<usize> = (0..d).collect();
    for k in 0..mtry.min(d) {
        let pick = rng.random_range(k..d);
        features.swap(k, pick);
    }
    features.truncate(mtry.min(d));

    let mut best: Option<(f64, usize, f64)> = None; // (impurity, feature, threshold)
    for &feature in &features {
        let mut order: Vec<usize> = idxs.to_vec();
        order.sort_by(|&a, &b| {
            ds.features()[(a, feature)]
                .partial_cmp(&ds.features()[(b, feature)])
                .expect("dataset features are finite")
        });
        let mut pos_below = 0usize;
        for k in 1..order.len() {
            if ds.labels()[order[k - 1]] == 1 {
                pos_below += 1;
            }
            let lo = ds.features()[(order[k - 1], feature)];
            let hi = ds.features()[(order[k], feature)];
            if lo == hi {
                continue;
            }
            let n_below = k;
            let n_above = order.len() - k;
            let pos_above = pos - pos_below;
            let impurity = (n_below as f64 * gini(pos_below, n_below - pos_below)
                + n_above as f64 * gini(pos_above, n_above - pos_above))
                / order.len() as f64;
            if best.map(|(b, _, _)| impurity < b).unwrap_or(true) {
                best = Some((impurity, feature, 0.5 * (lo + hi)));
            }
        }
    }

    match best {
        None => Node::Leaf {
            // Every candidate feature was constant on this node.
            label: majority(ds, idxs),
        },
        Some((_, feature, threshold)) => {
            let (below, above): (Vec<usize>, Vec<usize>) = idxs
                .iter()
                .partition(|&&i| ds.features()[(i, feature)] < threshold);
            Node::Split {
                feature,
                threshold,
                below: Box::new(grow(ds, &below, depth + 1, max_depth, mtry, rng)),
                above: Box::new(grow(ds, &above, depth + 1, max_depth, mtry, rng)),
            }
        }
    }
}

pub(super) fn fit(
    ds: &GroupedDataset,
    sample_weights: &[f64],
    trees: usize,
    max_depth: usize,
    base_seed: u64,
) -> ForestModel {
    let n = ds.n();
    let mtry = (ds.dim() as f64).sqrt().ceil() as usize;
    let sampler = WeightedIndex::new(sample_weights).expect("weights validated before fitting");
    let trees: Vec<Node> = (0..trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(base_seed, t as u64));
            let idxs: Vec<usize> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
            grow(ds, &idxs, 0, max_depth, mtry, &mut rng)
        })
        .collect();
    ForestModel {
        trees,
        dim: ds.dim(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic, SyntheticKind, SyntheticSpec};
    use ndarray::array;

    fn ring_data(seed: u64) -> GroupedDataset {
        make_synthetic(&SyntheticSpec {
            kind: SyntheticKind::RingVsCluster,
            n_per_cell: 25,
            group_shift: 0.5,
            noise_sd: 0.3,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn same_seed_reproduces_the_forest_exactly() {
        let ds = ring_data(31);
        let w = vec![1.0; ds.n()];
        let a = fit(&ds, &w, 40, 4, 7);
        let b = fit(&ds, &w, 40, 4, 7);
        for i in 0..ds.n() {
            assert_eq!(
                a.decision_value(ds.row(i)).to_bits(),
                b.decision_value(ds.row(i)).to_bits()
            );
        }
    }

    #[test]
    fn different_seeds_give_different_but_accurate_forests() {
        let ds = ring_data(32);
        let w = vec![1.0; ds.n()];
        let a = fit(&ds, &w, 60, 4, 1);
        let b = fit(&ds, &w, 60, 4, 2);
        let acc = |m: &ForestModel| {
            (0..ds.n())
                .filter(|&i| {
                    let p = if m.decision_value(ds.row(i)) >= 0.0 {
                        1
                    } else {
                        -1
                    };
                    p == ds.labels()[i]
                })
                .count() as f64
                / ds.n() as f64
        };
        assert!(acc(&a) > 0.85);
        assert!(acc(&b) > 0.85);
        let any_difference = (0..ds.n()).any(|i| {
            a.decision_value(ds.row(i)).to_bits() != b.decision_value(ds.row(i)).to_bits()
        });
        assert!(any_difference, "distinct seeds should perturb the vote");
    }

    #[test]
    fn depth_one_trees_are_stumps() {
        // With depth 1 every tree has at most one split, so a single clean
        // threshold is all the forest can and needs to express.
        let ds = GroupedDataset::new(
            array![[0.0], [1.0], [2.0], [10.0], [11.0], [12.0]],
            vec![-1, -1, -1, 1, 1, 1],
            vec![1, -1, 1, -1, 1, -1],
            vec!["x".into()],
        )
        .unwrap();
        let model = fit(&ds, &[1.0; 6], 30, 1, 5);
        // Individual trees whose bootstrap missed one side degenerate to
        // constant leaves, but the vote is still decisively signed.
        assert!(model.decision_value(array![0.0].view()) < -0.5);
        assert!(model.decision_value(array![12.0].view()) > 0.5);
    }

    #[test]
    fn zero_weight_rows_never_reach_the_trees() {
        // A mislabeled point with zero weight cannot be bootstrapped, so its
        // region keeps the surrounding class; giving it real weight pulls
        // the vote its way.
        let ds = GroupedDataset::new(
            array![[0.0], [0.5], [1.0], [9.0], [10.0], [11.0], [0.2]],
            vec![-1, -1, -1, 1, 1, 1, 1],
            vec![1, -1, 1, -1, 1, -1, 1],
            vec!["x".into()],
        )
        .unwrap();
        let masked = fit(&ds, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0], 50, 4, 3);
        let at = masked.decision_value(array![0.2].view());
        assert!(at < -0.5, "masked outlier left the vote at {at}");
        let included = fit(&ds, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 5.0], 50, 4, 3);
        assert!(
            included.decision_value(array![0.2].view()) > at,
            "a heavily weighted point should pull its region"
        );
    }
}
