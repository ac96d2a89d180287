//! Local linear surrogates for estimating distances to a black-box
//! decision boundary.
//!
//! Samples are drawn around the dataset mean, labeled by the black box, and
//! a weighted ridge regression (exponential kernel weights around the point
//! being explained) yields a local hyperplane; the point's distance to that
//! hyperplane stands in for its distance to the true boundary. Several
//! candidate sample sets are generated, ranked by how well a global
//! surrogate reproduces the black box on them, and the best few are kept
//! and averaged over.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blackbox::FittedBlackBox;
use crate::dataset::GroupedDataset;
use crate::error::{Error, Result};
use crate::seed;

/// How each sample set's distances are normalized before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceNormalization {
    /// Divide by (max − min) over the negative class. Preserves ratios, so
    /// downstream weight rules stay well-defined.
    #[default]
    ScaleByRange,
    /// Literal min–max: shift by the minimum, then divide by the range.
    /// Sends the closest negative to exactly zero; kept for comparison.
    ShiftedMinMax,
}

/// Knobs for neighborhood sampling and local fits.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExplainerConfig {
    /// Samples per neighborhood set.
    pub n_samples: usize,
    /// Sets kept (and averaged over) after ranking candidates by fidelity.
    pub n_sets: usize,
    /// Features retained in each local model (clamped to the dimension).
    pub top_k: usize,
    /// Width of the exponential distance kernel; `None` picks
    /// `0.75 * sqrt(d)`.
    pub kernel_width: Option<f64>,
    /// Ridge strength of the local (and fidelity) regressions.
    pub ridge_alpha: f64,
    pub seed: u64,
    pub normalization: DistanceNormalization,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig {
            n_samples: 5000,
            n_sets: 2,
            top_k: 10,
            kernel_width: None,
            ridge_alpha: 1.0,
            seed: 0,
            normalization: DistanceNormalization::default(),
        }
    }
}

impl ExplainerConfig {
    /// Validates against the dimension the explainer will run in.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n_sets == 0 {
            return Err(Error::InvalidInput("n_sets must be at least 1".into()));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidInput("top_k must be at least 1".into()));
        }
        if self.n_samples < 10 * dim {
            return Err(Error::InvalidInput(format!(
                "n_samples = {} is too small for {dim} features (need at least {})",
                self.n_samples,
                10 * dim
            )));
        }
        if let Some(kw) = self.kernel_width {
            if !(kw.is_finite() && kw > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "kernel width must be positive, got {kw}"
                )));
            }
        }
        if !(self.ridge_alpha.is_finite() && self.ridge_alpha > 0.0) {
            return Err(Error::InvalidInput(format!(
                "ridge alpha must be positive, got {}",
                self.ridge_alpha
            )));
        }
        Ok(())
    }

    fn effective_kernel_width(&self, dim: usize) -> f64 {
        self.kernel_width
            .unwrap_or_else(|| 0.75 * (dim as f64).sqrt())
    }

    fn effective_top_k(&self, dim: usize) -> usize {
        self.top_k.min(dim)
    }
}

/// A labeled sample cloud shared by every local fit against one black box.
#[derive(Debug, Clone)]
pub struct NeighborhoodSet {
    samples: Array2<f64>,
    blackbox_labels: Vec<i8>,
    /// Sign agreement of an unweighted global surrogate with the black box
    /// on these samples; used to rank candidate sets.
    fidelity: f64,
}

impl NeighborhoodSet {
    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn labels(&self) -> &[i8] {
        &self.blackbox_labels
    }

    pub fn fidelity(&self) -> f64 {
        self.fidelity
    }

    /// Re-labels every sample with a (re-trained) black box and refreshes
    /// the fidelity. Fails if the new model sees only one class here.
    pub fn relabel(&mut self, bb: &FittedBlackBox, cfg: &ExplainerConfig) -> Result<()> {
        if bb.dim() != self.samples.ncols() {
            return Err(Error::InvalidInput(format!(
                "black box expects {} features, set has {}",
                bb.dim(),
                self.samples.ncols()
            )));
        }
        let labels: Vec<i8> = (0..self.samples.nrows())
            .map(|i| bb.predict_raw(self.samples.row(i)))
            .collect();
        check_two_classes(&labels)?;
        self.fidelity = surrogate_fidelity(&self.samples, &labels, cfg.ridge_alpha)?;
        self.blackbox_labels = labels;
        Ok(())
    }
}

fn check_two_classes(labels: &[i8]) -> Result<()> {
    if !labels.contains(&1) || !labels.contains(&-1) {
        return Err(Error::Degenerate(
            "neighborhood was labeled single-class by the black box".into(),
        ));
    }
    Ok(())
}

/// Weighted ridge with an unpenalized intercept, solved by normal
/// equations. Returns `(coefficients, intercept)`. On a singular system the
/// ridge strength is multiplied by 10 and the solve retried once.
fn weighted_ridge(
    xs: &Array2<f64>,
    columns: &[usize],
    labels: &[i8],
    weights: Option<&[f64]>,
    alpha: f64,
) -> Result<(Array1<f64>, f64)> {
    let n = xs.nrows();
    let k = columns.len();
    // Normal-equation system over [selected columns, intercept].
    let mut a = Array2::zeros((k + 1, k + 1));
    let mut b = Array1::zeros(k + 1);
    for i in 0..n {
        let w = weights.map(|w| w[i]).unwrap_or(1.0);
        if w == 0.0 {
            continue;
        }
        let y = labels[i] as f64;
        for (p, &cp) in columns.iter().enumerate() {
            let zp = xs[(i, cp)];
            for (q, &cq) in columns.iter().enumerate().skip(p) {
                a[(p, q)] += w * zp * xs[(i, cq)];
            }
            a[(p, k)] += w * zp;
            b[p] += w * y * zp;
        }
        a[(k, k)] += w;
        b[k] += w * y;
    }
    for p in 0..k + 1 {
        for q in 0..p {
            a[(p, q)] = a[(q, p)];
        }
    }
    let mut attempt = a.clone();
    for p in 0..k {
        attempt[(p, p)] += alpha;
    }
    let solution = match crate::linalg::solve_lu(&attempt, &b) {
        Ok(s) => s,
        Err(_) => {
            let mut retry = a;
            for p in 0..k {
                retry[(p, p)] += alpha * 10.0;
            }
            crate::linalg::solve_lu(&retry, &b).map_err(|_| {
                Error::Numeric(
                    "ridge normal equations stayed singular after strengthening the penalty".into(),
                )
            })?
        }
    };
    let coefficients = solution.slice(ndarray::s![..k]).to_owned();
    Ok((coefficients, solution[k]))
}

/// Fidelity of a plain (unweighted, all-features) surrogate: the fraction
/// of samples where its sign matches the black-box label.
fn surrogate_fidelity(samples: &Array2<f64>, labels: &[i8], alpha: f64) -> Result<f64> {
    let all: Vec<usize> = (0..samples.ncols()).collect();
    let (coef, intercept) = weighted_ridge(samples, &all, labels, None, alpha)?;
    let hits = (0..samples.nrows())
        .filter(|&i| {
            let f = samples.row(i).dot(&coef) + intercept;
            let pred = if f >= 0.0 { 1 } else { -1 };
            pred == labels[i]
        })
        .count();
    Ok(hits as f64 / samples.nrows() as f64)
}

fn column_stats(ds: &GroupedDataset) -> (Vec<f64>, Vec<f64>) {
    let n = ds.n() as f64;
    let mut means = Vec::with_capacity(ds.dim());
    let mut sds = Vec::with_capacity(ds.dim());
    let features = ds.features();
    for j in 0..ds.dim() {
        let col = features.column(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        means.push(mean);
        sds.push(var.sqrt());
    }
    (means, sds)
}

fn sample_scaled(
    ds: &GroupedDataset,
    bb: &FittedBlackBox,
    cfg: &ExplainerConfig,
    set_index: u64,
    scale: f64,
) -> Result<NeighborhoodSet> {
    let d = ds.dim();
    let (means, sds) = column_stats(ds);
    let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(cfg.seed, set_index));
    let mut samples = Array2::zeros((cfg.n_samples, d));
    let normals: Vec<Normal<f64>> = (0..d)
        .map(|j| {
            Normal::new(means[j], sds[j] * scale)
                .map_err(|e| Error::Numeric(format!("column {j} sampling setup: {e}")))
        })
        .collect::<Result<_>>()?;
    for i in 0..cfg.n_samples {
        for j in 0..d {
            samples[(i, j)] = normals[j].sample(&mut rng);
        }
    }
    let labels: Vec<i8> = (0..cfg.n_samples)
        .map(|i| bb.predict_raw(samples.row(i)))
        .collect();
    check_two_classes(&labels)?;
    let fidelity = surrogate_fidelity(&samples, &labels, cfg.ridge_alpha)?;
    Ok(NeighborhoodSet {
        samples,
        blackbox_labels: labels,
        fidelity,
    })
}

/// Draws one neighborhood set: per-coordinate normal around the dataset's
/// feature means with the feature standard deviations, labeled by the black
/// box. Fails with a degenerate error when the whole cloud lands in one
/// class; callers may retry at a wider scale.
pub fn sample_neighborhood(
    ds: &GroupedDataset,
    bb: &FittedBlackBox,
    cfg: &ExplainerConfig,
    set_index: u64,
) -> Result<NeighborhoodSet> {
    cfg.validate(ds.dim())?;
    if bb.dim() != ds.dim() {
        return Err(Error::InvalidInput(format!(
            "black box expects {} features, dataset has {}",
            bb.dim(),
            ds.dim()
        )));
    }
    sample_scaled(ds, bb, cfg, set_index, 1.0)
}

/// Generates a candidate pool (at least five sets), retrying each
/// single-class candidate once at double the sampling scale, then keeps the
/// `n_sets` candidates whose global surrogate agrees best with the black
/// box.
pub fn select_neighborhoods(
    ds: &GroupedDataset,
    bb: &FittedBlackBox,
    cfg: &ExplainerConfig,
) -> Result<Vec<NeighborhoodSet>> {
    cfg.validate(ds.dim())?;
    if bb.dim() != ds.dim() {
        return Err(Error::InvalidInput(format!(
            "black box expects {} features, dataset has {}",
            bb.dim(),
            ds.dim()
        )));
    }
    let pool = cfg.n_sets.max(5);
    let mut candidates = Vec::new();
    for set_index in 0..pool as u64 {
        match sample_scaled(ds, bb, cfg, set_index, 1.0) {
            Ok(set) => candidates.push(set),
            Err(Error::Degenerate(_)) => {
                // One more try with a wider cloud; a second failure just
                // removes this candidate from the pool.
                if let Ok(set) = sample_scaled(ds, bb, cfg, set_index, 2.0) {
                    candidates.push(set);
                }
            }
            Err(e) => return Err(e),
        }
    }
    if candidates.len() < cfg.n_sets {
        return Err(Error::Degenerate(format!(
            "only {} of {} required neighborhood sets could be labeled with both classes",
            candidates.len(),
            cfg.n_sets
        )));
    }
    // Highest fidelity first; equal fidelities keep generation order.
    candidates.sort_by(|a, b| {
        b.fidelity
            .partial_cmp(&a.fidelity)
            .expect("fidelities are finite")
    });
    candidates.truncate(cfg.n_sets);
    Ok(candidates)
}

/// A fitted local hyperplane on a feature subset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalLinearModel {
    pub selected_features: Vec<usize>,
    pub coefficients: Array1<f64>,
    pub intercept: f64,
}

impl LocalLinearModel {
    /// Distance from `x` (full feature vector) to this hyperplane in the
    /// selected subspace: `|<coef, x_sel> + intercept| / ||coef||`.
    pub fn estimate_distance(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        let norm = self.coefficients.dot(&self.coefficients).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Degenerate(
                "local model has a zero coefficient vector".into(),
            ));
        }
        let mut f = self.intercept;
        for (c, &j) in self.coefficients.iter().zip(self.selected_features.iter()) {
            if j >= x.len() {
                return Err(Error::InvalidInput(format!(
                    "local model selects feature {j}, point has {}",
                    x.len()
                )));
            }
            f += c * x[j];
        }
        Ok(f.abs() / norm)
    }
}

/// Fits the local surrogate around `x`: exponential-kernel sample weights,
/// one full weighted ridge to rank features, then a refit on the `top_k`
/// strongest.
pub fn fit_local(
    ns: &NeighborhoodSet,
    x: ArrayView1<'_, f64>,
    cfg: &ExplainerConfig,
) -> Result<LocalLinearModel> {
    let d = ns.samples.ncols();
    if x.len() != d {
        return Err(Error::InvalidInput(format!(
            "point has {} features, neighborhood has {d}",
            x.len()
        )));
    }
    let kw = cfg.effective_kernel_width(d);
    let weights: Vec<f64> = (0..ns.samples.nrows())
        .map(|i| {
            let dist_sq: f64 = ns
                .samples
                .row(i)
                .iter()
                .zip(x.iter())
                .map(|(s, v)| (s - v) * (s - v))
                .sum();
            (-dist_sq / (kw * kw)).exp()
        })
        .collect();

    let all: Vec<usize> = (0..d).collect();
    let (full_coef, _) = weighted_ridge(
        &ns.samples,
        &all,
        &ns.blackbox_labels,
        Some(&weights),
        cfg.ridge_alpha,
    )?;

    // Rank by |coefficient|, ties to the smaller index, then restore index
    // order for the refit.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&p, &q| {
        full_coef[q]
            .abs()
            .partial_cmp(&full_coef[p].abs())
            .expect("ridge coefficients are finite")
            .then(p.cmp(&q))
    });
    let mut selected: Vec<usize> = order.into_iter().take(cfg.effective_top_k(d)).collect();
    selected.sort_unstable();

    let (coefficients, intercept) = weighted_ridge(
        &ns.samples,
        &selected,
        &ns.blackbox_labels,
        Some(&weights),
        cfg.ridge_alpha,
    )?;
    let norm = coefficients.dot(&coefficients).sqrt();
    if norm <= 1e-10 * intercept.abs().max(1.0) {
        return Err(Error::Degenerate(format!(
            "local surrogate collapsed to a constant (coefficient norm {norm:.3e})"
        )));
    }
    Ok(LocalLinearModel {
        selected_features: selected,
        coefficients,
        intercept,
    })
}

/// Divides one set's negative-class distances by their range (or applies
/// literal min–max), in place. Degenerate ranges leave the distances raw.
fn normalize_set_distances(values: &mut [f64], mode: DistanceNormalization) {
    if values.is_empty() {
        return;
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range < 1e-12 {
        log::warn!(
            "distance normalization skipped: negative-class spread {range:.3e} is degenerate"
        );
        return;
    }
    for v in values.iter_mut() {
        *v = match mode {
            DistanceNormalization::ScaleByRange => *v / range,
            DistanceNormalization::ShiftedMinMax => (*v - min) / range,
        };
    }
}

/// Estimated boundary distances for every row of `ds` against the given
/// neighborhood sets: per set, fit a local model at each predicted-negative
/// point and normalize the distances over the negative class; then average
/// across sets. Predicted-positive rows get 0.
pub fn average_distances_with(
    sets: &[NeighborhoodSet],
    ds: &GroupedDataset,
    predictions: &[i8],
    cfg: &ExplainerConfig,
) -> Result<Vec<f64>> {
    if sets.is_empty() {
        return Err(Error::InvalidInput(
            "at least one neighborhood set is required".into(),
        ));
    }
    if predictions.len() != ds.n() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} rows",
            predictions.len(),
            ds.n()
        )));
    }
    let negatives: Vec<usize> = (0..ds.n()).filter(|&i| predictions[i] == -1).collect();
    let mut totals = vec![0.0f64; ds.n()];
    for set in sets {
        let mut distances: Vec<f64> = negatives
            .par_iter()
            .map(|&i| {
                let lm = fit_local(set, ds.row(i), cfg)?;
                lm.estimate_distance(ds.row(i))
            })
            .collect::<Result<_>>()?;
        normalize_set_distances(&mut distances, cfg.normalization);
        for (&i, d) in negatives.iter().zip(distances.iter()) {
            totals[i] += d;
        }
    }
    for t in totals.iter_mut() {
        *t /= sets.len() as f64;
    }
    Ok(totals)
}

/// One-call version: selects the best neighborhood sets for `bb`, then
/// computes averaged distances against the black box's own predictions.
pub fn average_distances(
    ds: &GroupedDataset,
    bb: &FittedBlackBox,
    cfg: &ExplainerConfig,
) -> Result<Vec<f64>> {
    let sets = select_neighborhoods(ds, bb, cfg)?;
    let predictions = bb.predictions(ds)?;
    average_distances_with(&sets, ds, &predictions, cfg)
}
