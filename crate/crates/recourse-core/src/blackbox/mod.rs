//! Weighted binary classifiers treated as opaque models by the re-weighting
//! scheme: a logistic regression, boosted decision stumps, and a random
//! forest.
//!
//! All three fit against per-sample weights in a way that is invariant to
//! rescaling the weight vector, so only the *relative* emphasis of samples
//! matters — exactly what the recourse re-weighting produces.

mod adaboost;
mod forest;
mod logistic;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::GroupedDataset;
use crate::error::{Error, Result};

pub use adaboost::AdaboostModel;
pub use forest::ForestModel;
pub use logistic::LogisticModel;

/// Current on-disk format version for fitted black boxes.
const BLACKBOX_SCHEMA_VERSION: u32 = 1;

/// Which model family to fit, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BlackBoxSpec {
    /// L2-regularized logistic regression, trained by full-batch gradient
    /// descent. The only family exposing exact linear parameters.
    Logistic {
        learning_rate: f64,
        epochs: usize,
        l2: f64,
    },
    /// AdaBoost over axis-aligned decision stumps.
    Adaboost { rounds: usize },
    /// Random forest of depth-capped trees grown on weighted bootstrap
    /// samples.
    Forest { trees: usize, max_depth: usize },
}

impl BlackBoxSpec {
    pub fn logistic() -> Self {
        BlackBoxSpec::Logistic {
            learning_rate: 0.1,
            epochs: 500,
            l2: 1e-4,
        }
    }

    pub fn adaboost() -> Self {
        BlackBoxSpec::Adaboost { rounds: 50 }
    }

    pub fn forest() -> Self {
        BlackBoxSpec::Forest {
            trees: 100,
            max_depth: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BlackBoxSpec::Logistic {
                learning_rate,
                epochs,
                l2,
            } => {
                if !(learning_rate.is_finite() && *learning_rate > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "learning rate must be positive, got {learning_rate}"
                    )));
                }
                if *epochs == 0 {
                    return Err(Error::InvalidInput("epochs must be at least 1".into()));
                }
                if !(l2.is_finite() && *l2 >= 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "l2 strength must be non-negative, got {l2}"
                    )));
                }
            }
            BlackBoxSpec::Adaboost { rounds } => {
                if *rounds == 0 {
                    return Err(Error::InvalidInput(
                        "adaboost needs at least one round".into(),
                    ));
                }
            }
            BlackBoxSpec::Forest { trees, max_depth } => {
                if *trees == 0 {
                    return Err(Error::InvalidInput("forest needs at least one tree".into()));
                }
                if *max_depth == 0 {
                    return Err(Error::InvalidInput(
                        "forest trees need at least depth 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

impl Default for BlackBoxSpec {
    fn default() -> Self {
        BlackBoxSpec::logistic()
    }
}

impl fmt::Display for BlackBoxSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlackBoxSpec::Logistic { .. } => write!(f, "logistic"),
            BlackBoxSpec::Adaboost { .. } => write!(f, "adaboost"),
            BlackBoxSpec::Forest { .. } => write!(f, "forest"),
        }
    }
}

impl FromStr for BlackBoxSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "logistic" => Ok(BlackBoxSpec::logistic()),
            "adaboost" => Ok(BlackBoxSpec::adaboost()),
            "forest" => Ok(BlackBoxSpec::forest()),
            other => Err(Error::InvalidInput(format!(
                "unknown black-box family '{other}' (expected logistic, adaboost or forest)"
            ))),
        }
    }
}

/// A fitted model of any family, ready to classify.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FittedBlackBox {
    Logistic(LogisticModel),
    Adaboost(AdaboostModel),
    Forest(ForestModel),
}

impl FittedBlackBox {
    pub fn dim(&self) -> usize {
        match self {
            FittedBlackBox::Logistic(m) => m.dim(),
            FittedBlackBox::Adaboost(m) => m.dim(),
            FittedBlackBox::Forest(m) => m.dim(),
        }
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::InvalidInput(format!(
                "point has {len} features, model expects {}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// A real-valued score whose sign is the prediction: the linear logit,
    /// the boosted vote sum, or the forest's mean vote.
    pub fn decision_value(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(self.decision_value_raw(x))
    }

    pub(crate) fn decision_value_raw(&self, x: ArrayView1<'_, f64>) -> f64 {
        match self {
            FittedBlackBox::Logistic(m) => m.decision_value(x),
            FittedBlackBox::Adaboost(m) => m.decision_value(x),
            FittedBlackBox::Forest(m) => m.decision_value(x),
        }
    }

    /// Class prediction; a zero score counts as positive.
    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<i8> {
        self.check_dim(x.len())?;
        Ok(self.predict_raw(x))
    }

    pub(crate) fn predict_raw(&self, x: ArrayView1<'_, f64>) -> i8 {
        if self.decision_value_raw(x) >= 0.0 {
            1
        } else {
            -1
        }
    }

    pub fn predictions(&self, ds: &GroupedDataset) -> Result<Vec<i8>> {
        self.check_dim(ds.dim())?;
        Ok((0..ds.n()).map(|i| self.predict_raw(ds.row(i))).collect())
    }

    pub fn accuracy(&self, ds: &GroupedDataset) -> Result<f64> {
        let preds = self.predictions(ds)?;
        let hits = preds
            .iter()
            .zip(ds.labels())
            .filter(|(p, y)| p == y)
            .count();
        Ok(hits as f64 / ds.n() as f64)
    }

    /// Exact linear decision parameters `(w, b)` with `f(x) = w'x + b`, when
    /// the family has them (logistic only).
    pub fn linear_parameters(&self) -> Option<(Array1<f64>, f64)> {
        match self {
            FittedBlackBox::Logistic(m) => Some(m.linear_parameters()),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct BlackBoxFile<'a> {
            schema_version: u32,
            model: &'a FittedBlackBox,
        }
        Ok(serde_json::to_string_pretty(&BlackBoxFile {
            schema_version: BLACKBOX_SCHEMA_VERSION,
            model: self,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct BlackBoxFile {
            schema_version: u32,
            model: FittedBlackBox,
        }
        let file: BlackBoxFile = serde_json::from_str(text)?;
        if file.schema_version != BLACKBOX_SCHEMA_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported black-box schema version {} (expected {BLACKBOX_SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        Ok(file.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Fits the requested family on weighted data. `seed` drives the forest's
/// bootstrap; the other families are deterministic and ignore it.
pub fn fit(
    spec: &BlackBoxSpec,
    ds: &GroupedDataset,
    weights: &[f64],
    seed: u64,
) -> Result<FittedBlackBox> {
    spec.validate()?;
    validate_weights(weights, ds.n())?;
    if !ds.labels().contains(&1) || !ds.labels().contains(&-1) {
        return Err(Error::Data(
            "training requires both classes to be present".into(),
        ));
    }
    Ok(match *spec {
        BlackBoxSpec::Logistic {
            learning_rate,
            epochs,
            l2,
        } => FittedBlackBox::Logistic(logistic::fit(ds, weights, learning_rate, epochs, l2)),
        BlackBoxSpec::Adaboost { rounds } => {
            FittedBlackBox::Adaboost(adaboost::fit(ds, weights, rounds))
        }
        BlackBoxSpec::Forest { trees, max_depth } => {
            FittedBlackBox::Forest(forest::fit(ds, weights, trees, max_depth, seed))
        }
    })
}

fn validate_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} weights for {n} samples",
            weights.len()
        )));
    }
    if let Some(bad) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidInput(format!(
            "sample weights must be finite and non-negative, got {bad}"
        )));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidInput(
            "sample weights must not all be zero".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic, SyntheticKind, SyntheticSpec};
    use ndarray::array;

    fn ring_data(seed: u64) -> GroupedDataset {
        make_synthetic(&SyntheticSpec {
            kind: SyntheticKind::RingVsCluster,
            n_per_cell: 30,
            group_shift: 0.5,
            noise_sd: 0.3,
            seed,
        })
        .unwrap()
    }

    fn linear_data(seed: u64) -> GroupedDataset {
        make_synthetic(&SyntheticSpec {
            kind: SyntheticKind::LinearShiftedGaussians,
            n_per_cell: 30,
            group_shift: 1.0,
            noise_sd: 0.5,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn spec_parsing_round_trips() {
        for name in ["logistic", "adaboost", "forest"] {
            let spec: BlackBoxSpec = name.parse().unwrap();
            assert_eq!(spec.to_string(), name);
        }
        assert!("perceptron".parse::<BlackBoxSpec>().is_err());
    }

    #[test]
    fn all_families_learn_their_natural_data() {
        let unit = |n: usize| vec![1.0; n];
        let linear = linear_data(1);
        let logistic = fit(&BlackBoxSpec::logistic(), &linear, &unit(linear.n()), 0).unwrap();
        assert!(logistic.accuracy(&linear).unwrap() > 0.9);

        let ring = ring_data(2);
        let ada = fit(&BlackBoxSpec::adaboost(), &ring, &unit(ring.n()), 0).unwrap();
        assert!(ada.accuracy(&ring).unwrap() > 0.85);
        let forest = fit(&BlackBoxSpec::forest(), &ring, &unit(ring.n()), 3).unwrap();
        assert!(forest.accuracy(&ring).unwrap() > 0.85);
    }

    #[test]
    fn only_logistic_exposes_linear_parameters() {
        let ds = linear_data(4);
        let w = vec![1.0; ds.n()];
        assert!(fit(&BlackBoxSpec::logistic(), &ds, &w, 0)
            .unwrap()
            .linear_parameters()
            .is_some());
        assert!(fit(&BlackBoxSpec::adaboost(), &ds, &w, 0)
            .unwrap()
            .linear_parameters()
            .is_none());
        assert!(fit(&BlackBoxSpec::forest(), &ds, &w, 0)
            .unwrap()
            .linear_parameters()
            .is_none());
    }

    #[test]
    fn weight_validation_rejects_bad_vectors() {
        let ds = linear_data(5);
        let spec = BlackBoxSpec::logistic();
        assert!(fit(&spec, &ds, &vec![1.0; ds.n() - 1], 0).is_err());
        let mut w = vec![1.0; ds.n()];
        w[0] = -0.5;
        assert!(fit(&spec, &ds, &w, 0).is_err());
        w[0] = f64::NAN;
        assert!(fit(&spec, &ds, &w, 0).is_err());
        assert!(fit(&spec, &ds, &vec![0.0; ds.n()], 0).is_err());
    }

    #[test]
    fn fitting_rejects_single_class_data() {
        let ds = GroupedDataset::new(
            array![[0.0], [1.0]],
            vec![1, 1],
            vec![1, -1],
            vec!["x".into()],
        )
        .unwrap();
        assert!(fit(&BlackBoxSpec::logistic(), &ds, &[1.0, 1.0], 0).is_err());
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let ds = ring_data(6);
        let w = vec![1.0; ds.n()];
        for spec in [
            BlackBoxSpec::logistic(),
            BlackBoxSpec::adaboost(),
            BlackBoxSpec::forest(),
        ] {
            let model = fit(&spec, &ds, &w, 11).unwrap();
            let back = FittedBlackBox::from_json(&model.to_json().unwrap()).unwrap();
            assert_eq!(
                back.predictions(&ds).unwrap(),
                model.predictions(&ds).unwrap(),
                "{spec}: predictions changed across serialization"
            );
        }
        let model = fit(&BlackBoxSpec::logistic(), &ds, &w, 0).unwrap();
        let bumped = model
            .to_json()
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 3");
        assert!(FittedBlackBox::from_json(&bumped).is_err());
    }

    #[test]
    fn dimension_mismatches_are_reported() {
        let ds = linear_data(7);
        let model = fit(&BlackBoxSpec::logistic(), &ds, &vec![1.0; ds.n()], 0).unwrap();
        assert!(model.predict(array![1.0].view()).is_err());
        assert!(model.decision_value(array![1.0, 2.0, 3.0].view()).is_err());
    }

    /// Scaling every weight by a power of two must not change any family's
    /// fit: the ensembles depend only on the normalized distribution, and
    /// the logistic loss normalizes the weights itself.
    #[test]
    fn weight_scaling_leaves_fits_unchanged() {
        let ds = ring_data(8);
        let base: Vec<f64> = (0..ds.n()).map(|i| 0.25 + (i % 7) as f64 * 0.5).collect();
        let scaled: Vec<f64> = base.iter().map(|w| w * 4.0).collect();
        for spec in [
            BlackBoxSpec::logistic(),
            BlackBoxSpec::adaboost(),
            BlackBoxSpec::forest(),
        ] {
            let a = fit(&spec, &ds, &base, 21).unwrap();
            let b = fit(&spec, &ds, &scaled, 21).unwrap();
            for i in 0..ds.n() {
                let va = a.decision_value(ds.row(i)).unwrap();
                let vb = b.decision_value(ds.row(i)).unwrap();
                match spec {
                    // Gradient descent accumulates rounding differences.
                    BlackBoxSpec::Logistic { .. } => {
                        assert!(
                            (va - vb).abs() <= 1e-6 * (1.0 + va.abs()),
                            "{spec}: {va} vs {vb}"
                        );
                    }
                    // The ensembles see bitwise-identical distributions.
                    _ => assert_eq!(va.to_bits(), vb.to_bits(), "{spec}: {va} vs {vb}"),
                }
            }
        }
    }
}
