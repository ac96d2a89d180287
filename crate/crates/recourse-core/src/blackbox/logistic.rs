//! Weighted logistic regression by full-batch gradient descent.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::GroupedDataset;

/// Linear logit model `f(x) = w'x + b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticModel {
    weights: Array1<f64>,
    bias: f64,
}

impl LogisticModel {
    /// Builds a model with given parameters directly, bypassing training;
    /// used by tests that need an exactly known linear boundary.
    #[cfg(test)]
    pub(crate) fn from_parts(weights: Array1<f64>, bias: f64) -> Self {
        LogisticModel { weights, bias }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision_value(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.weights.dot(&x) + self.bias
    }

    pub fn linear_parameters(&self) -> (Array1<f64>, f64) {
        (self.weights.clone(), self.bias)
    }
}

/// Minimizes the weighted logistic loss plus an L2 penalty on the weights
/// (the bias is unpenalized):
///
/// `sum_i w_i ln(1 + exp(-y_i f(x_i))) / sum_i w_i  +  (l2 / 2) ||w||^2`
///
/// The weight normalization makes the objective — and therefore the whole
/// descent trajectory — invariant to rescaling the weight vector, and makes
/// a duplicated row equivalent to doubling its weight.
pub(super) fn fit(
    ds: &GroupedDataset,
    sample_weights: &[f64],
    learning_rate: f64,
    epochs: usize,
    l2: f64,
) -> LogisticModel {
    let n = ds.n();
    let d = ds.dim();
    let total: f64 = sample_weights.iter().sum();
    let mut w = Array1::zeros(d);
    let mut b = 0.0f64;
    let mut grad_w = Array1::zeros(d);
    for _ in 0..epochs {
        grad_w.fill(0.0);
        let mut grad_b = 0.0;
        for i in 0..n {
            if sample_weights[i] == 0.0 {
                continue;
            }
            let x = ds.row(i);
            let y = ds.labels()[i] as f64;
            let margin = y * (w.dot(&x) + b);
            // d/df ln(1+exp(-m)) = -sigma(-m); stable at both extremes.
            let sigma = 1.0 / (1.0 + margin.exp());
            let coeff = -sample_weights[i] * y * sigma;
            grad_w.scaled_add(coeff, &x);
            grad_b += coeff;
        }
        grad_w.mapv_inplace(|g| g / total);
        grad_b /= total;
        grad_w.scaled_add(l2, &w);
        w.scaled_add(-learning_rate, &grad_w);
        b -= learning_rate * grad_b;
    }
    LogisticModel {
        weights: w,
        bias: b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn line_dataset() -> GroupedDataset {
        GroupedDataset::new(
            array![[2.0], [3.0], [-2.0], [-3.0]],
            vec![1, 1, -1, -1],
            vec![1, -1, 1, -1],
            vec!["x".into()],
        )
        .unwrap()
    }

    #[test]
    fn separable_line_is_classified_correctly() {
        let ds = line_dataset();
        let model = fit(&ds, &[1.0; 4], 0.1, 500, 1e-4);
        for i in 0..ds.n() {
            let pred = if model.decision_value(ds.row(i)) >= 0.0 {
                1
            } else {
                -1
            };
            assert_eq!(pred, ds.labels()[i]);
        }
        // Symmetric data: bias stays near zero, slope positive.
        let (w, b) = model.linear_parameters();
        assert!(w[0] > 0.1);
        assert!(b.abs() < 1e-6);
    }

    #[test]
    fn doubling_a_weight_equals_duplicating_the_row() {
        let doubled = GroupedDataset::new(
            array![[2.0], [3.0], [-2.0], [-3.0]],
            vec![1, 1, -1, -1],
            vec![1, -1, 1, -1],
            vec!["x".into()],
        )
        .unwrap();
        let duplicated = GroupedDataset::new(
            array![[2.0], [2.0], [3.0], [-2.0], [-3.0]],
            vec![1, 1, 1, -1, -1],
            vec![1, 1, -1, 1, -1],
            vec!["x".into()],
        )
        .unwrap();
        let a = fit(&doubled, &[2.0, 1.0, 1.0, 1.0], 0.1, 300, 1e-4);
        let b = fit(&duplicated, &[1.0; 5], 0.1, 300, 1e-4);
        let (wa, ba) = a.linear_parameters();
        let (wb, bb) = b.linear_parameters();
        assert!((wa[0] - wb[0]).abs() < 1e-9, "{} vs {}", wa[0], wb[0]);
        assert!((ba - bb).abs() < 1e-9);
    }

    #[test]
    fn zero_weight_rows_are_invisible() {
        let with_outlier = GroupedDataset::new(
            array![[2.0], [3.0], [-2.0], [-3.0], [100.0]],
            vec![1, 1, -1, -1, -1],
            vec![1, -1, 1, -1, 1],
            vec!["x".into()],
        )
        .unwrap();
        let masked = fit(&with_outlier, &[1.0, 1.0, 1.0, 1.0, 0.0], 0.1, 200, 1e-4);
        let clean = fit(&line_dataset(), &[1.0; 4], 0.1, 200, 1e-4);
        let (wm, bm) = masked.linear_parameters();
        let (wc, bc) = clean.linear_parameters();
        assert_eq!(wm[0].to_bits(), wc[0].to_bits());
        assert_eq!(bm.to_bits(), bc.to_bits());
    }

    #[test]
    fn upweighting_pulls_the_boundary() {
        // Classes overlap at x = 0.5 (labeled negative) vs x = 1.0
        // (positive); heavily upweighting a positive point at 0.1 drags the
        // boundary below it.
        let ds = GroupedDataset::new(
            array![[0.1], [1.0], [0.5], [-1.0]],
            vec![1, 1, -1, -1],
            vec![1, -1, 1, -1],
            vec!["x".into()],
        )
        .unwrap();
        let balanced = fit(&ds, &[1.0; 4], 0.2, 2000, 1e-6);
        let tilted = fit(&ds, &[200.0, 1.0, 1.0, 1.0], 0.2, 2000, 1e-6);
        let at = |m: &LogisticModel, v: f64| m.decision_value(array![v].view());
        assert!(at(&balanced, 0.1) < 0.0, "0.1 starts on the negative side");
        assert!(at(&tilted, 0.1) > 0.0, "upweighting flips it positive");
    }
}
