//! Repeated-run experiment harness: subsample, split, cross-validate,
//! train, and report before/after accuracy and group-gap statistics.
//!
//! Each run draws its own subsample, splits it 80/20, picks hyperparameters
//! by stratified cross-validation (SVM method only), trains the baseline and
//! equalized models, and measures both on both splits. Reports carry full
//! summary statistics plus the raw per-run records they were computed from,
//! so every number in a report can be re-derived from its own records.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blackbox::BlackBoxSpec;
use crate::dataset::{split, GroupedDataset};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::local_explainer::ExplainerConfig;
use crate::recourse_svm::{evaluate_recourse, train_iterative, TrainConfig};
use crate::reweight::equalize_with_holdout;
use crate::seed;

/// Report layout version written into every JSON report.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Regularizer grid searched by default.
pub const DEFAULT_LAMBDA_GRID: [f64; 7] = [0.2, 0.5, 1.0, 2.0, 10.0, 50.0, 100.0];

/// Polynomial degree grid searched by default.
pub const DEFAULT_DEGREE_GRID: [u32; 3] = [2, 3, 5];

/// Two candidates whose mean gaps (or accuracies) differ by less than this
/// are treated as tied during model selection.
const SELECTION_TOLERANCE: f64 = 1e-9;

/// Which kernels the SVM method's grid search ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Linear,
    /// Polynomial kernels with the configured degree grid.
    Polynomial,
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFamily::Linear => write!(f, "linear"),
            KernelFamily::Polynomial => write!(f, "polynomial"),
        }
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(KernelFamily::Linear),
            "polynomial" | "poly" => Ok(KernelFamily::Polynomial),
            other => Err(Error::InvalidInput(format!(
                "unknown kernel family '{other}' (expected linear or polynomial)"
            ))),
        }
    }
}

/// Which equalization method an experiment exercises.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// Recourse-regularized SVM; before = unregularized model, after = the
    /// iteratively re-trained regularized one.
    Svm { family: KernelFamily },
    /// Black-box re-weighting; before = unit-weight fit, after = the
    /// re-weighted fit.
    Agnostic { blackbox: BlackBoxSpec },
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Svm { family } => write!(f, "svm ({family})"),
            Method::Agnostic { blackbox } => write!(f, "agnostic ({blackbox})"),
        }
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Dataset label written into reports; the data itself is passed to
    /// [`run_experiment`] separately.
    pub dataset_name: String,
    pub method: Method,
    /// Regularizer grid for the SVM method; must be non-empty there.
    pub lambda_grid: Vec<f64>,
    /// Degree grid for the polynomial family; must be non-empty there.
    pub degree_grid: Vec<u32>,
    pub n_runs: usize,
    /// Rows drawn (without replacement) per run; clamped to the dataset
    /// size.
    pub sample_size: usize,
    pub cv_folds: usize,
    /// Master seed; every run derives its own stream from it.
    pub seed: u64,
    /// SVM slack bound.
    pub nu: f64,
    /// Weight-refresh rounds of the iterative SVM training.
    pub svm_max_iters: usize,
    /// Surrogate settings for the agnostic method (its `seed` field is
    /// overridden per run).
    pub explainer: ExplainerConfig,
    /// Worker threads for concurrent runs; 0 uses the ambient thread pool.
    pub workers: usize,
}

impl ExperimentConfig {
    /// SVM-method config with the standard grids and defaults.
    pub fn svm(dataset_name: impl Into<String>, family: KernelFamily) -> Self {
        ExperimentConfig {
            dataset_name: dataset_name.into(),
            method: Method::Svm { family },
            ..ExperimentConfig::base()
        }
    }

    /// Agnostic-method config with defaults.
    pub fn agnostic(dataset_name: impl Into<String>, blackbox: BlackBoxSpec) -> Self {
        ExperimentConfig {
            dataset_name: dataset_name.into(),
            method: Method::Agnostic { blackbox },
            ..ExperimentConfig::base()
        }
    }

    fn base() -> Self {
        ExperimentConfig {
            dataset_name: String::new(),
            method: Method::Svm {
                family: KernelFamily::Linear,
            },
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            degree_grid: DEFAULT_DEGREE_GRID.to_vec(),
            n_runs: 10,
            sample_size: 1000,
            cv_folds: 10,
            seed: 0,
            nu: 10.0,
            svm_max_iters: 10,
            explainer: ExplainerConfig::default(),
            workers: 0,
        }
    }

    /// Checks grid, run-count, and parameter sanity.
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::InvalidInput("n_runs must be at least 1".into()));
        }
        if self.sample_size < 4 {
            return Err(Error::InvalidInput(format!(
                "sample_size must be at least 4, got {}",
                self.sample_size
            )));
        }
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(Error::InvalidInput(format!(
                "nu must be positive and finite, got {}",
                self.nu
            )));
        }
        if let Method::Svm { family } = &self.method {
            if self.lambda_grid.is_empty() {
                return Err(Error::InvalidInput(
                    "lambda grid must not be empty for the svm method".into(),
                ));
            }
            if self
                .lambda_grid
                .iter()
                .any(|l| !(l.is_finite() && *l >= 0.0))
            {
                return Err(Error::InvalidInput(
                    "lambda grid entries must be finite and non-negative".into(),
                ));
            }
            if *family == KernelFamily::Polynomial && self.degree_grid.is_empty() {
                return Err(Error::InvalidInput(
                    "degree grid must not be empty for the polynomial family".into(),
                ));
            }
            if self.degree_grid.iter().any(|d| *d == 0) {
                return Err(Error::InvalidInput(
                    "degree grid entries must be at least 1".into(),
                ));
            }
            if self.cv_folds < 2 {
                return Err(Error::InvalidInput(format!(
                    "cross-validation needs at least 2 folds, got {}",
                    self.cv_folds
                )));
            }
        }
        Ok(())
    }

    /// The kernels the grid search ranges over.
    fn kernel_grid(&self) -> Vec<KernelSpec> {
        match &self.method {
            Method::Svm {
                family: KernelFamily::Linear,
            } => vec![KernelSpec::Linear],
            Method::Svm {
                family: KernelFamily::Polynomial,
            } => self
                .degree_grid
                .iter()
                .map(|d| KernelSpec::Polynomial { degree: *d })
                .collect(),
            Method::Agnostic { .. } => Vec::new(),
        }
    }
}

/// Winning grid point of a cross-validation search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSelection {
    pub lambda: f64,
    pub kernel: KernelSpec,
    /// Mean validation gap over the usable folds.
    pub mean_u_abs: f64,
    /// Mean validation accuracy over the usable folds.
    pub mean_accuracy: f64,
}

/// Assigns every row to one of `folds` validation folds, stratified so each
/// fold sees every `(label, group)` cell.
fn fold_assignment(ds: &GroupedDataset, folds: usize, seed_value: u64) -> Result<Vec<usize>> {
    let mut assignment = vec![0usize; ds.n()];
    for (slot, (label, group, mut idx)) in ds.cell_indices().into_iter().enumerate() {
        if idx.len() < folds {
            return Err(Error::CrossValidation(format!(
                "cell (label {label}, group {group}) has {} rows, fewer than {folds} folds",
                idx.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(seed_value, slot as u64));
        idx.shuffle(&mut rng);
        for (i, row) in idx.into_iter().enumerate() {
            assignment[row] = i % folds;
        }
    }
    Ok(assignment)
}

struct GridEvaluation {
    lambda: f64,
    kernel: KernelSpec,
    mean_u_abs: f64,
    mean_accuracy: f64,
    usable_folds: usize,
}

/// `true` when `a` beats `b` under the selection order: smaller mean gap,
/// then higher mean accuracy, then smaller lambda, then smaller degree.
fn selection_better(a: &GridEvaluation, b: &GridEvaluation) -> bool {
    if a.mean_u_abs < b.mean_u_abs - SELECTION_TOLERANCE {
        return true;
    }
    if a.mean_u_abs > b.mean_u_abs + SELECTION_TOLERANCE {
        return false;
    }
    if a.mean_accuracy > b.mean_accuracy + SELECTION_TOLERANCE {
        return true;
    }
    if a.mean_accuracy < b.mean_accuracy - SELECTION_TOLERANCE {
        return false;
    }
    if a.lambda != b.lambda {
        return a.lambda < b.lambda;
    }
    kernel_order(&a.kernel) < kernel_order(&b.kernel)
}

fn kernel_order(kernel: &KernelSpec) -> u32 {
    match kernel {
        KernelSpec::Linear => 0,
        KernelSpec::Polynomial { degree } => *degree,
        // Not produced by the grid; ordered after all polynomial kernels.
        KernelSpec::Rbf { .. } => u32::MAX,
    }
}

/// Stratified k-fold search over the `(lambda, kernel)` grid, minimizing the
/// mean validation gap. Folds whose evaluation is degenerate (a group with
/// no predicted negatives) or whose training fails are skipped; a grid point
/// with no usable fold is discarded; every grid point being discarded is an
/// error. Ties break to higher validation accuracy, then smaller lambda,
/// then smaller degree.
pub fn cross_validate(
    train: &GroupedDataset,
    cfg: &ExperimentConfig,
    seed_value: u64,
) -> Result<GridSelection> {
    cfg.validate()?;
    let kernels = cfg.kernel_grid();
    if kernels.is_empty() {
        return Err(Error::InvalidInput(
            "cross-validation applies only to the svm method".into(),
        ));
    }
    let assignment = fold_assignment(train, cfg.cv_folds, seed_value)?;
    let cost = vec![1.0; train.dim()];

    let mut grid: Vec<(f64, KernelSpec)> = Vec::new();
    for lambda in &cfg.lambda_grid {
        for kernel in &kernels {
            grid.push((*lambda, *kernel));
        }
    }

    let evaluations: Vec<GridEvaluation> = grid
        .par_iter()
        .map(|(lambda, kernel)| {
            let train_cfg = TrainConfig {
                lambda: *lambda,
                nu: cfg.nu,
                max_iters: cfg.svm_max_iters,
                ..TrainConfig::default()
            };
            let mut u_sum = 0.0;
            let mut acc_sum = 0.0;
            let mut usable = 0usize;
            for fold in 0..cfg.cv_folds {
                let val_idx: Vec<usize> =
                    (0..train.n()).filter(|i| assignment[*i] == fold).collect();
                let fit_idx: Vec<usize> =
                    (0..train.n()).filter(|i| assignment[*i] != fold).collect();
                let Ok(fit_ds) = train.subset(&fit_idx) else {
                    continue;
                };
                let Ok(val_ds) = train.subset(&val_idx) else {
                    continue;
                };
                let Ok(outcome) = train_iterative(&fit_ds, kernel, &cost, &train_cfg) else {
                    continue;
                };
                let Ok(eval) = evaluate_recourse(&outcome.model, &val_ds) else {
                    continue;
                };
                if eval.degenerate {
                    continue;
                }
                let Ok(acc) = outcome.model.accuracy(&val_ds) else {
                    continue;
                };
                u_sum += eval.u_abs;
                acc_sum += acc;
                usable += 1;
            }
            GridEvaluation {
                lambda: *lambda,
                kernel: *kernel,
                mean_u_abs: if usable == 0 {
                    f64::INFINITY
                } else {
                    u_sum / usable as f64
                },
                mean_accuracy: if usable == 0 {
                    0.0
                } else {
                    acc_sum / usable as f64
                },
                usable_folds: usable,
            }
        })
        .collect();

    let mut best: Option<&GridEvaluation> = None;
    for candidate in evaluations.iter().filter(|e| e.usable_folds > 0) {
        match best {
            None => best = Some(candidate),
            Some(current) => {
                if selection_better(candidate, current) {
                    best = Some(candidate);
                }
            }
        }
    }
    let best = best.ok_or_else(|| {
        Error::CrossValidation("no grid point produced a usable validation fold".into())
    })?;
    Ok(GridSelection {
        lambda: best.lambda,
        kernel: best.kernel,
        mean_u_abs: best.mean_u_abs,
        mean_accuracy: best.mean_accuracy,
    })
}

/// Model stage a record refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Before,
    After,
}

/// Data split a record was measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One measurement row: a `(run, phase, split)` cell of the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    /// The run's derived seed.
    pub seed: u64,
    pub phase: Phase,
    pub split: Split,
    pub accuracy: f64,
    pub u_abs: f64,
    /// Hyperparameters the run settled on, e.g. `lambda=2;kernel=poly:3`.
    pub hyperparameters: String,
    /// True when a group had no predicted negatives in this cell, making its
    /// gap value a zero-filled placeholder.
    pub degenerate: bool,
}

/// A run that errored out, with the failure preserved verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: usize,
    pub seed: u64,
    pub message: String,
}

/// Six-number summary of one metric across runs. Quantiles interpolate
/// linearly between order statistics; outliers stay included in every
/// number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub min: f64,
    pub max: f64,
}

impl SummaryStats {
    /// Summarizes a non-empty slice.
    pub fn from_values(values: &[f64]) -> Result<SummaryStats> {
        if values.is_empty() {
            return Err(Error::InvalidInput(
                "cannot summarize an empty value list".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("cannot summarize non-finite values".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
        let quantile = |p: f64| -> f64 {
            let h = (sorted.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(sorted.len() - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        };
        Ok(SummaryStats {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            median: quantile(0.5),
            q25: quantile(0.25),
            q75: quantile(0.75),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        })
    }
}

/// Per-metric summaries across the completed runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStatistics {
    pub train_accuracy_before: SummaryStats,
    pub train_accuracy_after: SummaryStats,
    pub test_accuracy_before: SummaryStats,
    pub test_accuracy_after: SummaryStats,
    pub train_u_abs_before: SummaryStats,
    pub train_u_abs_after: SummaryStats,
    pub test_u_abs_before: SummaryStats,
    pub test_u_abs_after: SummaryStats,
    /// Per-run `(before - after) / before` of the train-split gap; a zero
    /// `before` contributes 0 (see `zero_before_runs` on the report).
    pub train_u_reduction: SummaryStats,
    pub test_u_reduction: SummaryStats,
}

/// Relative gap reduction, guarding `before = 0` as "no reduction".
/// Returns the value and whether the guard fired.
fn gap_reduction(before: f64, after: f64) -> (f64, bool) {
    if before == 0.0 {
        (0.0, true)
    } else {
        ((before - after) / before, false)
    }
}

/// Extracts the metric value of one `(run, phase, split)` cell.
fn record_value(
    records: &[RunRecord],
    run: usize,
    phase: Phase,
    split: Split,
    metric: fn(&RunRecord) -> f64,
) -> Result<f64> {
    records
        .iter()
        .find(|r| r.run == run && r.phase == phase && r.split == split)
        .map(metric)
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "records are missing the ({run}, {phase:?}, {split:?}) cell"
            ))
        })
}

/// Recomputes the full statistics block from raw records. The report
/// builder itself goes through this function, so published statistics are
/// re-derivable from the published records by construction. Returns the
/// statistics plus the number of runs whose zero train/test `before` gap
/// forced the reduction guard.
pub fn statistics_from_records(records: &[RunRecord]) -> Result<(RunStatistics, usize)> {
    let mut runs: Vec<usize> = records.iter().map(|r| r.run).collect();
    runs.sort_unstable();
    runs.dedup();
    if runs.is_empty() {
        return Err(Error::InvalidInput("no records to summarize".into()));
    }

    let collect = |phase: Phase, split: Split, metric: fn(&RunRecord) -> f64| -> Result<Vec<f64>> {
        runs.iter()
            .map(|r| record_value(records, *r, phase, split, metric))
            .collect()
    };
    let accuracy = |r: &RunRecord| r.accuracy;
    let gap = |r: &RunRecord| r.u_abs;

    let mut zero_before = 0usize;
    let mut reductions = |split: Split| -> Result<Vec<f64>> {
        let before = collect(Phase::Before, split, gap)?;
        let after = collect(Phase::After, split, gap)?;
        Ok(before
            .iter()
            .zip(after.iter())
            .map(|(b, a)| {
                let (value, flagged) = gap_reduction(*b, *a);
                if flagged {
                    zero_before += 1;
                }
                value
            })
            .collect())
    };
    let train_reduction = reductions(Split::Train)?;
    let test_reduction = reductions(Split::Test)?;

    let stats = RunStatistics {
        train_accuracy_before: SummaryStats::from_values(&collect(
            Phase::Before,
            Split::Train,
            accuracy,
        )?)?,
        train_accuracy_after: SummaryStats::from_values(&collect(
            Phase::After,
            Split::Train,
            accuracy,
        )?)?,
        test_accuracy_before: SummaryStats::from_values(&collect(
            Phase::Before,
            Split::Test,
            accuracy,
        )?)?,
        test_accuracy_after: SummaryStats::from_values(&collect(
            Phase::After,
            Split::Test,
            accuracy,
        )?)?,
        train_u_abs_before: SummaryStats::from_values(&collect(Phase::Before, Split::Train, gap)?)?,
        train_u_abs_after: SummaryStats::from_values(&collect(Phase::After, Split::Train, gap)?)?,
        test_u_abs_before: SummaryStats::from_values(&collect(Phase::Before, Split::Test, gap)?)?,
        test_u_abs_after: SummaryStats::from_values(&collect(Phase::After, Split::Test, gap)?)?,
        train_u_reduction: SummaryStats::from_values(&train_reduction)?,
        test_u_reduction: SummaryStats::from_values(&test_reduction)?,
    };
    Ok((stats, zero_before))
}

/// Everything an experiment produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub dataset: String,
    pub method: Method,
    pub n_runs: usize,
    pub sample_size: usize,
    pub cv_folds: usize,
    pub seed: u64,
    /// Runs that finished; statistics cover exactly these.
    pub completed_runs: usize,
    pub failures: Vec<RunFailure>,
    /// How many reduction values were guarded because the before-gap was
    /// exactly zero.
    pub zero_before_runs: usize,
    pub statistics: RunStatistics,
    pub records: Vec<RunRecord>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Raw records as CSV (one row per `(run, phase, split)` cell).
    pub fn records_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for record in &self.records {
            writer
                .serialize(record)
                .map_err(|e| Error::Serialization(e.to_string()))?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::Serialization(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn save_records_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.records_csv()?).map_err(|e| Error::io(path, e))
    }
}

/// The four records a completed run contributes.
fn run_records(
    run: usize,
    run_seed: u64,
    hyper: &str,
    cells: [(Phase, Split, f64, f64, bool); 4],
) -> Vec<RunRecord> {
    cells
        .into_iter()
        .map(|(phase, split, accuracy, u_abs, degenerate)| RunRecord {
            run,
            seed: run_seed,
            phase,
            split,
            accuracy,
            u_abs,
            hyperparameters: hyper.to_string(),
            degenerate,
        })
        .collect()
}

fn svm_run(
    train: &GroupedDataset,
    test: &GroupedDataset,
    cfg: &ExperimentConfig,
    run: usize,
    run_seed: u64,
) -> Result<Vec<RunRecord>> {
    let selection = cross_validate(train, cfg, seed::mix(run_seed, 3))?;
    let train_cfg = TrainConfig {
        lambda: selection.lambda,
        nu: cfg.nu,
        max_iters: cfg.svm_max_iters,
        ..TrainConfig::default()
    };
    let cost = vec![1.0; train.dim()];
    let outcome = train_iterative(train, &selection.kernel, &cost, &train_cfg)?;
    let hyper = format!("lambda={};kernel={}", selection.lambda, selection.kernel);

    let mut cells = Vec::with_capacity(4);
    for (phase, model) in [
        (Phase::Before, &outcome.vanilla),
        (Phase::After, &outcome.model),
    ] {
        for (split, ds) in [(Split::Train, train), (Split::Test, test)] {
            let eval = evaluate_recourse(model, ds)?;
            cells.push((
                phase,
                split,
                model.accuracy(ds)?,
                eval.u_abs,
                eval.degenerate,
            ));
        }
    }
    Ok(run_records(
        run,
        run_seed,
        &hyper,
        [cells[0], cells[1], cells[2], cells[3]],
    ))
}

fn agnostic_run(
    train: &GroupedDataset,
    test: &GroupedDataset,
    blackbox: &BlackBoxSpec,
    cfg: &ExperimentConfig,
    run: usize,
    run_seed: u64,
) -> Result<Vec<RunRecord>> {
    let explainer = ExplainerConfig {
        seed: seed::mix(run_seed, 3),
        ..cfg.explainer.clone()
    };
    let (result, holdout) = equalize_with_holdout(train, Some(test), blackbox, &explainer)?;
    let holdout = holdout.expect("holdout split was provided");
    let hyper = format!("blackbox={blackbox}");

    let acc = |model: &crate::blackbox::FittedBlackBox, ds: &GroupedDataset| model.accuracy(ds);
    let cells = [
        (
            Phase::Before,
            Split::Train,
            acc(&result.model_before, train)?,
            result.before.u_abs,
            result.before.degenerate,
        ),
        (
            Phase::Before,
            Split::Test,
            acc(&result.model_before, test)?,
            holdout.before.u_abs,
            holdout.before.degenerate,
        ),
        (
            Phase::After,
            Split::Train,
            acc(&result.model_after, train)?,
            result.after.u_abs,
            result.after.degenerate,
        ),
        (
            Phase::After,
            Split::Test,
            acc(&result.model_after, test)?,
            holdout.after.u_abs,
            holdout.after.degenerate,
        ),
    ];
    Ok(run_records(run, run_seed, &hyper, cells))
}

fn single_run(
    ds: &GroupedDataset,
    cfg: &ExperimentConfig,
    run: usize,
) -> (u64, Result<Vec<RunRecord>>) {
    let run_seed = seed::mix(cfg.seed, run as u64);
    let result = (|| {
        let sample = ds.subsample(cfg.sample_size.min(ds.n()), seed::mix(run_seed, 1))?;
        let (train, test) = split(&sample, 0.8, seed::mix(run_seed, 2))?;
        match &cfg.method {
            Method::Svm { .. } => svm_run(&train, &test, cfg, run, run_seed),
            Method::Agnostic { blackbox } => {
                agnostic_run(&train, &test, blackbox, cfg, run, run_seed)
            }
        }
    })();
    (run_seed, result)
}

/// Runs the full experiment: `n_runs` independent subsample → split →
/// (cross-validate) → train → measure cycles, concurrently up to
/// `cfg.workers`, then aggregates. Individual run failures are recorded and
/// excluded; more than half failing aborts the experiment.
pub fn run_experiment(ds: &GroupedDataset, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let outcomes: Vec<(u64, Result<Vec<RunRecord>>)> = if cfg.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot build worker pool: {e}")))?;
        pool.install(|| {
            (0..cfg.n_runs)
                .into_par_iter()
                .map(|run| single_run(ds, cfg, run))
                .collect()
        })
    } else {
        (0..cfg.n_runs)
            .into_par_iter()
            .map(|run| single_run(ds, cfg, run))
            .collect()
    };

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (run, (run_seed, outcome)) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(mut rows) => records.append(&mut rows),
            Err(e) => failures.push(RunFailure {
                run,
                seed: run_seed,
                message: e.to_string(),
            }),
        }
    }
    if failures.len() * 2 > cfg.n_runs {
        return Err(Error::Experiment(format!(
            "{} of {} runs failed; first failure: {}",
            failures.len(),
            cfg.n_runs,
            failures[0].message
        )));
    }
    let completed_runs = cfg.n_runs - failures.len();
    let (statistics, zero_before_runs) = statistics_from_records(&records)?;
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        dataset: cfg.dataset_name.clone(),
        method: cfg.method.clone(),
        n_runs: cfg.n_runs,
        sample_size: cfg.sample_size,
        cv_folds: cfg.cv_folds,
        seed: cfg.seed,
        completed_runs,
        failures,
        zero_before_runs,
        statistics,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic, standardize_in_place, SyntheticKind, SyntheticSpec};
    use approx::assert_abs_diff_eq;

    fn shifted(n_per_cell: usize, seed: u64) -> GroupedDataset {
        let mut ds = make_synthetic(&SyntheticSpec {
            kind: SyntheticKind::LinearShiftedGaussians,
            n_per_cell,
            group_shift: 3.0,
            noise_sd: 0.5,
            seed,
        })
        .unwrap();
        standardize_in_place(&mut ds);
        ds
    }

    fn quick_svm_config() -> ExperimentConfig {
        ExperimentConfig {
            lambda_grid: vec![0.0, 100.0],
            cv_folds: 3,
            n_runs: 2,
            sample_size: 96,
            svm_max_iters: 3,
            ..ExperimentConfig::svm("synthetic", KernelFamily::Linear)
        }
    }

    #[test]
    fn summary_stats_match_hand_quantiles() {
        let s = SummaryStats::from_values(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_abs_diff_eq!(s.mean, 2.5);
        assert_abs_diff_eq!(s.median, 2.5);
        assert_abs_diff_eq!(s.q25, 1.75);
        assert_abs_diff_eq!(s.q75, 3.25);
        assert_abs_diff_eq!(s.min, 1.0);
        assert_abs_diff_eq!(s.max, 4.0);
        assert!(SummaryStats::from_values(&[]).is_err());
        assert!(SummaryStats::from_values(&[f64::NAN]).is_err());
        let single = SummaryStats::from_values(&[7.0]).unwrap();
        assert_eq!(single.median, 7.0);
        assert_eq!(single.q25, 7.0);
        assert_eq!(single.q75, 7.0);
    }

    #[test]
    fn selection_order_is_gap_then_accuracy_then_lambda_then_degree() {
        let point = |lambda: f64, degree: u32, u: f64, acc: f64| GridEvaluation {
            lambda,
            kernel: KernelSpec::Polynomial { degree },
            mean_u_abs: u,
            mean_accuracy: acc,
            usable_folds: 1,
        };
        // Smaller gap wins regardless of accuracy.
        assert!(selection_better(
            &point(10.0, 5, 0.1, 0.6),
            &point(0.2, 2, 0.2, 0.9)
        ));
        // Gap tie: higher accuracy wins.
        assert!(selection_better(
            &point(10.0, 5, 0.1, 0.9),
            &point(0.2, 2, 0.1, 0.8)
        ));
        // Gap and accuracy tie: smaller lambda wins.
        assert!(selection_better(
            &point(0.2, 5, 0.1, 0.9),
            &point(10.0, 2, 0.1, 0.9)
        ));
        // Full tie apart from degree: smaller degree wins.
        assert!(selection_better(
            &point(0.2, 2, 0.1, 0.9),
            &point(0.2, 5, 0.1, 0.9)
        ));
        // Ties within tolerance behave like exact ties.
        assert!(selection_better(
            &point(0.2, 2, 0.1 + 1e-12, 0.9),
            &point(10.0, 2, 0.1, 0.9)
        ));
    }

    #[test]
    fn single_grid_point_is_returned_trivially() {
        let ds = shifted(20, 5);
        let cfg = ExperimentConfig {
            lambda_grid: vec![2.0],
            cv_folds: 3,
            svm_max_iters: 2,
            ..ExperimentConfig::svm("synthetic", KernelFamily::Linear)
        };
        let sel = cross_validate(&ds, &cfg, 9).unwrap();
        assert_eq!(sel.lambda, 2.0);
        assert_eq!(sel.kernel, KernelSpec::Linear);
        assert!(sel.mean_u_abs.is_finite());
        assert!(sel.mean_accuracy > 0.5);
    }

    #[test]
    fn shifted_data_selects_a_positive_lambda() {
        // With a real recourse disparity, the unregularized grid point
        // cannot minimize the validation gap.
        let ds = shifted(25, 17);
        let cfg = ExperimentConfig {
            lambda_grid: vec![0.0, 100.0],
            cv_folds: 3,
            svm_max_iters: 3,
            ..ExperimentConfig::svm("synthetic", KernelFamily::Linear)
        };
        let sel = cross_validate(&ds, &cfg, 4).unwrap();
        assert_eq!(sel.lambda, 100.0);
    }

    #[test]
    fn too_many_folds_for_a_cell_is_rejected() {
        let ds = shifted(5, 3);
        let cfg = ExperimentConfig {
            cv_folds: 10,
            ..ExperimentConfig::svm("synthetic", KernelFamily::Linear)
        };
        match cross_validate(&ds, &cfg, 0) {
            Err(Error::CrossValidation(_)) => {}
            other => panic!("expected a cross-validation error, got {other:?}"),
        }
    }

    #[test]
    fn config_validation_catches_bad_grids() {
        let mut cfg = ExperimentConfig::svm("d", KernelFamily::Polynomial);
        cfg.lambda_grid.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::svm("d", KernelFamily::Polynomial);
        cfg.degree_grid.clear();
        assert!(cfg.validate().is_err());
        // An empty degree grid is fine for the linear family...
        let mut cfg = ExperimentConfig::svm("d", KernelFamily::Linear);
        cfg.degree_grid.clear();
        assert!(cfg.validate().is_ok());
        // ...and for the agnostic method, which ignores both grids.
        let mut cfg = ExperimentConfig::agnostic("d", BlackBoxSpec::logistic());
        cfg.lambda_grid.clear();
        cfg.degree_grid.clear();
        assert!(cfg.validate().is_ok());
        let cfg = ExperimentConfig {
            n_runs: 0,
            ..ExperimentConfig::svm("d", KernelFamily::Linear)
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn gap_reduction_guards_zero_before() {
        assert_eq!(gap_reduction(0.0, 0.3), (0.0, true));
        let (value, flagged) = gap_reduction(2.0, 1.0);
        assert_abs_diff_eq!(value, 0.5);
        assert!(!flagged);
        // A growing gap yields a negative reduction rather than a guard.
        let (value, flagged) = gap_reduction(1.0, 1.5);
        assert_abs_diff_eq!(value, -0.5);
        assert!(!flagged);
    }

    #[test]
    fn svm_experiment_is_deterministic_and_self_consistent() {
        let ds = shifted(60, 23);
        let cfg = quick_svm_config();
        let report = run_experiment(&ds, &cfg).unwrap();
        assert_eq!(report.schema_version, REPORT_SCHEMA_VERSION);
        assert_eq!(report.completed_runs, 2);
        assert!(report.failures.is_empty());
        assert_eq!(report.records.len(), 8);

        // Determinism under a fixed master seed, including across worker
        // counts.
        let again = run_experiment(&ds, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
        let two_workers = run_experiment(
            &ds,
            &ExperimentConfig {
                workers: 2,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&report.records).unwrap(),
            serde_json::to_string(&two_workers.records).unwrap()
        );

        // Statistics must be re-derivable from the published records.
        let (recomputed, zero_before) = statistics_from_records(&report.records).unwrap();
        assert_eq!(report.statistics, recomputed);
        assert_eq!(report.zero_before_runs, zero_before);

        // Independent spot check of one metric against the records.
        let mut before_test: Vec<f64> = report
            .records
            .iter()
            .filter(|r| r.phase == Phase::Before && r.split == Split::Test)
            .map(|r| r.u_abs)
            .collect();
        before_test.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(report.statistics.test_u_abs_before.min, before_test[0]);
        assert_eq!(
            report.statistics.test_u_abs_before.max,
            before_test[before_test.len() - 1]
        );

        // Quantile ordering invariant across every metric block.
        for s in [
            report.statistics.train_accuracy_before,
            report.statistics.train_accuracy_after,
            report.statistics.test_accuracy_before,
            report.statistics.test_accuracy_after,
            report.statistics.train_u_abs_before,
            report.statistics.train_u_abs_after,
            report.statistics.test_u_abs_before,
            report.statistics.test_u_abs_after,
            report.statistics.train_u_reduction,
            report.statistics.test_u_reduction,
        ] {
            assert!(s.q25 <= s.median && s.median <= s.q75);
            assert!(s.min <= s.mean && s.mean <= s.max);
        }
    }

    #[test]
    fn agnostic_experiment_round_trips_records_through_csv() {
        let ds = shifted(40, 31);
        let cfg = ExperimentConfig {
            n_runs: 2,
            sample_size: 120,
            explainer: ExplainerConfig {
                n_samples: 400,
                kernel_width: Some(2.0),
                ..ExplainerConfig::default()
            },
            ..ExperimentConfig::agnostic("synthetic", BlackBoxSpec::logistic())
        };
        let report = run_experiment(&ds, &cfg).unwrap();
        assert_eq!(report.records.len(), 8);
        assert!(report.failures.is_empty());
        for record in &report.records {
            assert!(record.hyperparameters.contains("blackbox=logistic"));
            assert!(record.accuracy > 0.5, "accuracy {}", record.accuracy);
            assert!(record.u_abs.is_finite());
        }

        let csv_text = report.records_csv().unwrap();
        let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
        let parsed: Vec<RunRecord> = reader.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(parsed, report.records);

        // JSON report round-trip keeps the statistics block intact.
        let json = report.to_json().unwrap();
        let back: ExperimentReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.statistics, report.statistics);
        assert_eq!(back.records, report.records);
    }

    #[test]
    fn failing_runs_abort_the_experiment() {
        let ds = shifted(20, 2);
        // 10 samples per neighborhood set is below the 10-per-dimension
        // floor for 2 features, so every run fails at set selection.
        let cfg = ExperimentConfig {
            n_runs: 2,
            sample_size: 60,
            explainer: ExplainerConfig {
                n_samples: 10,
                ..ExplainerConfig::default()
            },
            ..ExperimentConfig::agnostic("synthetic", BlackBoxSpec::logistic())
        };
        match run_experiment(&ds, &cfg) {
            Err(Error::Experiment(message)) => {
                assert!(message.contains("2 of 2 runs failed"), "{message}");
            }
            other => panic!("expected an experiment error, got {other:?}"),
        }
    }
}
