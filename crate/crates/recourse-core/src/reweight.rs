//! Model-agnostic recourse equalization by sample re-weighting.
//!
//! One pass: fit the black box with unit weights, estimate every predicted
//! negative's boundary distance through the local surrogates, turn those
//! distances into weights that de-emphasize points stranded far from the
//! boundary, and refit. The refit model's boundary relaxes toward the
//! far-off negatives, shrinking the gap between the two groups' average
//! distances.

use serde::{Deserialize, Serialize};

use crate::blackbox::{fit as fit_blackbox, BlackBoxSpec, FittedBlackBox};
use crate::dataset::GroupedDataset;
use crate::error::{Error, Result};
use crate::local_explainer::{average_distances_with, select_neighborhoods, ExplainerConfig};
use crate::recourse_svm::RecourseEvaluation;
use crate::seed;

/// Distances at or below this are treated as this when forming weight
/// ratios.
const DISTANCE_FLOOR: f64 = 1e-9;

/// Everything produced by one [`equalize`] pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReweightResult {
    /// Per-sample training weights used for the refit: 1 for predicted
    /// positives, `(0, 1]` for predicted negatives.
    pub weights: Vec<f64>,
    /// Group distance summary of the unit-weight model.
    pub before: RecourseEvaluation,
    /// Group distance summary of the re-weighted model.
    pub after: RecourseEvaluation,
    pub model_before: FittedBlackBox,
    pub model_after: FittedBlackBox,
}

/// Before/after group distance summaries for a held-out split, estimated
/// with the same surrogate sample sets as the training-side evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HoldoutEvaluation {
    pub before: RecourseEvaluation,
    pub after: RecourseEvaluation,
}

/// Turns estimated boundary distances into re-training weights: each
/// predicted-negative point gets the smallest negative-class distance
/// divided by its own (so the closest point keeps weight 1 and far points
/// shrink); predicted positives keep weight 1.
///
/// Zero distances on negatives are floored at 1e-9 with a warning.
pub fn compute_namd(distances: &[f64], predictions: &[i8]) -> Result<Vec<f64>> {
    if distances.len() != predictions.len() {
        return Err(Error::InvalidInput(format!(
            "{} distances for {} predictions",
            distances.len(),
            predictions.len()
        )));
    }
    if let Some(bad) = predictions.iter().find(|v| !matches!(**v, -1 | 1)) {
        return Err(Error::InvalidInput(format!(
            "prediction value {bad} outside {{-1, +1}}"
        )));
    }
    let mut floored = 0usize;
    let mut min_distance = f64::INFINITY;
    for (d, p) in distances.iter().zip(predictions.iter()) {
        if *p != -1 {
            continue;
        }
        if !(d.is_finite() && *d >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "negative-class distance must be finite and non-negative, got {d}"
            )));
        }
        let clamped = if *d <= DISTANCE_FLOOR {
            floored += 1;
            DISTANCE_FLOOR
        } else {
            *d
        };
        min_distance = min_distance.min(clamped);
    }
    if floored > 0 {
        log::warn!("{floored} negative-class distances at or below {DISTANCE_FLOOR} were floored");
    }
    Ok(distances
        .iter()
        .zip(predictions.iter())
        .map(|(d, p)| {
            if *p != -1 {
                1.0
            } else {
                min_distance / d.max(DISTANCE_FLOOR)
            }
        })
        .collect())
}

/// Group summary of non-negative estimated distances: mean over each
/// group's predicted negatives (zero and flagged when a group has none).
/// Unlike the margin-based evaluation, these distances carry no sign.
pub fn evaluation_from_distances(
    ds: &GroupedDataset,
    predictions: &[i8],
    distances: &[f64],
) -> Result<RecourseEvaluation> {
    if predictions.len() != ds.n() || distances.len() != ds.n() {
        return Err(Error::InvalidInput(format!(
            "{} predictions and {} distances for {} rows",
            predictions.len(),
            distances.len(),
            ds.n()
        )));
    }
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for i in 0..ds.n() {
        if predictions[i] != -1 {
            continue;
        }
        let slot = if ds.groups()[i] == 1 { 0 } else { 1 };
        sums[slot] += distances[i];
        counts[slot] += 1;
    }
    let mean = |slot: usize| {
        if counts[slot] == 0 {
            0.0
        } else {
            sums[slot] / counts[slot] as f64
        }
    };
    let (r_pos, r_neg) = (mean(0), mean(1));
    Ok(RecourseEvaluation {
        recourse_group_pos: r_pos,
        recourse_group_neg: r_neg,
        negatives_group_pos: counts[0],
        negatives_group_neg: counts[1],
        u_abs: (r_pos - r_neg).abs(),
        degenerate: counts[0] == 0 || counts[1] == 0,
    })
}

/// Runs the single-pass equalization: unit-weight fit, distance estimation,
/// re-weighting, refit, and the before/after group comparison. All
/// randomness derives from `cfg.seed`.
pub fn equalize(
    ds: &GroupedDataset,
    spec: &BlackBoxSpec,
    cfg: &ExplainerConfig,
) -> Result<ReweightResult> {
    equalize_with_holdout(ds, None, spec, cfg).map(|(result, _)| result)
}

/// [`equalize`] plus an evaluation of an optional held-out split against the
/// same pair of models, using the surrogate sets selected on the training
/// data so both splits are measured by the same yardstick.
pub fn equalize_with_holdout(
    ds: &GroupedDataset,
    holdout: Option<&GroupedDataset>,
    spec: &BlackBoxSpec,
    cfg: &ExplainerConfig,
) -> Result<(ReweightResult, Option<HoldoutEvaluation>)> {
    let unit = vec![1.0; ds.n()];
    let model_before = fit_blackbox(spec, ds, &unit, seed::mix(cfg.seed, 1))
        .map_err(Error::at_stage("initial fit"))?;
    let predictions_before = model_before
        .predictions(ds)
        .map_err(Error::at_stage("initial fit"))?;

    let mut sets = select_neighborhoods(ds, &model_before, cfg)
        .map_err(Error::at_stage("neighborhood selection"))?;
    let distances_before = average_distances_with(&sets, ds, &predictions_before, cfg)
        .map_err(Error::at_stage("distance estimation"))?;
    let before = evaluation_from_distances(ds, &predictions_before, &distances_before)
        .map_err(Error::at_stage("distance estimation"))?;
    let holdout_before = holdout
        .map(|h| {
            let predictions = model_before.predictions(h)?;
            let distances = average_distances_with(&sets, h, &predictions, cfg)?;
            evaluation_from_distances(h, &predictions, &distances)
        })
        .transpose()
        .map_err(Error::at_stage("holdout distance estimation"))?;

    let weights = compute_namd(&distances_before, &predictions_before)
        .map_err(Error::at_stage("weight computation"))?;

    let model_after = fit_blackbox(spec, ds, &weights, seed::mix(cfg.seed, 2))
        .map_err(Error::at_stage("re-weighted fit"))?;
    let predictions_after = model_after
        .predictions(ds)
        .map_err(Error::at_stage("re-weighted fit"))?;
    for set in sets.iter_mut() {
        set.relabel(&model_after, cfg)
            .map_err(Error::at_stage("re-labeled distance estimation"))?;
    }
    let distances_after = average_distances_with(&sets, ds, &predictions_after, cfg)
        .map_err(Error::at_stage("re-labeled distance estimation"))?;
    let after = evaluation_from_distances(ds, &predictions_after, &distances_after)
        .map_err(Error::at_stage("re-labeled distance estimation"))?;
    let holdout_after = holdout
        .map(|h| {
            let predictions = model_after.predictions(h)?;
            let distances = average_distances_with(&sets, h, &predictions, cfg)?;
            evaluation_from_distances(h, &predictions, &distances)
        })
        .transpose()
        .map_err(Error::at_stage("holdout distance estimation"))?;

    let holdout_eval = match (holdout_before, holdout_after) {
        (Some(before), Some(after)) => Some(HoldoutEvaluation { before, after }),
        _ => None,
    };
    Ok((
        ReweightResult {
            weights,
            before,
            after,
            model_before,
            model_after,
        },
        holdout_eval,
    ))
}
