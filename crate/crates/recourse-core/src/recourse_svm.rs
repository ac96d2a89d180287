//! Kernel SVM with a recourse-difference penalty.
//!
//! The standard soft-margin dual is extended with one extra variable tied to
//! a *pseudo point*: the weighted difference between the two groups'
//! negatively classified members, mapped through the per-feature cost
//! scaling. Bounding that variable's multiplier by `lambda` penalizes the
//! gap between the groups' average distances to the decision boundary, so
//! `lambda = 0` recovers the vanilla SVM and larger values trade margin for
//! recourse parity.
//!
//! Since the weights depend on which points the model classifies negatively,
//! training alternates between solving the dual and refreshing the weights
//! from the latest predictions, until predictions stabilize.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::GroupedDataset;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::qp::{QuadraticProgram, SolverSettings};

/// Current on-disk model format version.
const MODEL_SCHEMA_VERSION: u32 = 1;

/// Which population count normalizes the per-sample pseudo weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GroupDenominator {
    /// Divide by the number of *predicted-negative* members of the sample's
    /// group, so each group's weights sum to one.
    #[default]
    PredictedNegatives,
    /// Divide by the full group size; groups with many positives then
    /// contribute a smaller total mass.
    FullGroup,
}

/// Training knobs for [`train_iterative`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Bound on the recourse-difference multiplier; 0 disables the penalty.
    pub lambda: f64,
    /// Per-sample box bound of the dual (the usual SVM slack penalty).
    pub nu: f64,
    /// Cap on weight-refresh rounds after the initial vanilla fit.
    pub max_iters: usize,
    /// Multipliers within this margin of the box faces do not count as free
    /// support vectors when recovering the bias.
    pub sv_threshold: f64,
    pub solver: SolverSettings,
    pub denominator: GroupDenominator,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            nu: 10.0,
            max_iters: 10,
            sv_threshold: 1e-8,
            solver: SolverSettings::default(),
            denominator: GroupDenominator::default(),
        }
    }
}

/// Per-sample weights of the pseudo point, derived from a prediction vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PseudoWeights {
    p: Vec<f64>,
    y_c: f64,
    denominator: GroupDenominator,
}

impl PseudoWeights {
    pub fn weights(&self) -> &[f64] {
        &self.p
    }

    /// Equality-constraint coefficient of the pseudo variable: the
    /// group-signed sum of the weights. Zero whenever both groups have
    /// predicted negatives under the predicted-negatives denominator.
    pub fn pseudo_label_coefficient(&self) -> f64 {
        self.y_c
    }
}

/// Computes the pseudo-point weights from a model's predictions: a sample
/// predicted positive gets weight zero, a predicted-negative sample gets one
/// over (twice half) its group's denominator count, so each group's
/// negatives average rather than sum.
pub fn pseudo_weights(
    ds: &GroupedDataset,
    predictions: &[i8],
    denominator: GroupDenominator,
) -> Result<PseudoWeights> {
    if predictions.len() != ds.n() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} samples",
            predictions.len(),
            ds.n()
        )));
    }
    if let Some(bad) = predictions.iter().find(|v| !matches!(**v, -1 | 1)) {
        return Err(Error::InvalidInput(format!(
            "prediction value {bad} outside {{-1, +1}}"
        )));
    }
    let mut group_count = [0usize; 2]; // [group +1, group -1]
    let mut negative_count = [0usize; 2];
    for i in 0..ds.n() {
        let slot = if ds.groups()[i] == 1 { 0 } else { 1 };
        group_count[slot] += 1;
        if predictions[i] == -1 {
            negative_count[slot] += 1;
        }
    }
    let denom = |slot: usize| -> usize {
        match denominator {
            GroupDenominator::PredictedNegatives => negative_count[slot],
            GroupDenominator::FullGroup => group_count[slot],
        }
    };
    let mut p = vec![0.0; ds.n()];
    let mut y_c = 0.0;
    for i in 0..ds.n() {
        if predictions[i] == 1 {
            continue;
        }
        let slot = if ds.groups()[i] == 1 { 0 } else { 1 };
        let d = denom(slot);
        debug_assert!(d > 0, "negative sample implies nonzero denominator");
        p[i] = 1.0 / d as f64;
        y_c += ds.groups()[i] as f64 * p[i];
    }
    // Clean up floating-point dust: with both groups' weights summing to one
    // the coefficient is exactly zero in exact arithmetic.
    if y_c.abs() < 1e-12 {
        y_c = 0.0;
    }
    Ok(PseudoWeights {
        p,
        y_c,
        denominator,
    })
}

/// Kernel evaluations reused across the weight-refresh rounds: the plain
/// Gram matrix, plus the mixed and scaled-scaled blocks when the cost vector
/// actually rescales anything.
struct DualGram {
    /// `K(x_i, x_j)`
    kxx: Array2<f64>,
    /// `K(x_i, C x_j)`; `None` when the cost is the identity.
    kxc: Option<Array2<f64>>,
    /// `K(C x_i, C x_j)`; `None` when the cost is the identity.
    kcc: Option<Array2<f64>>,
}

impl DualGram {
    fn build(ds: &GroupedDataset, kernel: &KernelSpec, cost: &[f64]) -> Result<Self> {
        validate_cost(cost, ds.dim())?;
        kernel.validate()?;
        let x = ds.features();
        let kxx = crate::kernels::gram(kernel, x, x)?;
        if cost.iter().all(|c| *c == 1.0) {
            return Ok(DualGram {
                kxx,
                kxc: None,
                kcc: None,
            });
        }
        let scaled = scale_rows(x.to_owned(), cost);
        let kxc = crate::kernels::gram(kernel, x, scaled.view())?;
        let kcc = crate::kernels::gram(kernel, scaled.view(), scaled.view())?;
        Ok(DualGram {
            kxx,
            kxc: Some(kxc),
            kcc: Some(kcc),
        })
    }

    fn xx(&self, i: usize, j: usize) -> f64 {
        self.kxx[(i, j)]
    }

    /// `K(x_i, C x_j)`.
    fn xc(&self, i: usize, j: usize) -> f64 {
        match &self.kxc {
            Some(k) => k[(i, j)],
            None => self.kxx[(i, j)],
        }
    }

    /// `K(C x_i, C x_j)`.
    fn cc(&self, i: usize, j: usize) -> f64 {
        match &self.kcc {
            Some(k) => k[(i, j)],
            None => self.kxx[(i, j)],
        }
    }
}

fn validate_cost(cost: &[f64], dim: usize) -> Result<()> {
    if cost.len() != dim {
        return Err(Error::InvalidInput(format!(
            "cost vector has length {}, expected {dim}",
            cost.len()
        )));
    }
    if let Some(bad) = cost.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "cost entries must be positive and finite, got {bad}"
        )));
    }
    Ok(())
}

fn scale_rows(mut x: Array2<f64>, cost: &[f64]) -> Array2<f64> {
    for mut row in x.rows_mut() {
        for (v, c) in row.iter_mut().zip(cost.iter()) {
            *v *= c;
        }
    }
    x
}

/// Assembles the regularized dual: `n` SVM variables plus the pseudo
/// variable, boxed to `[-lambda, lambda]`, all coupled through one equality
/// constraint.
pub fn build_dual(
    ds: &GroupedDataset,
    pw: &PseudoWeights,
    kernel: &KernelSpec,
    cost: &[f64],
    cfg: &TrainConfig,
) -> Result<QuadraticProgram> {
    let gram = DualGram::build(ds, kernel, cost)?;
    build_dual_from_gram(ds, pw, &gram, cfg.lambda, cfg.nu)
}

fn build_dual_from_gram(
    ds: &GroupedDataset,
    pw: &PseudoWeights,
    gram: &DualGram,
    lambda: f64,
    nu: f64,
) -> Result<QuadraticProgram> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "nu must be positive and finite, got {nu}"
        )));
    }
    if pw.p.len() != ds.n() {
        return Err(Error::InvalidInput(format!(
            "pseudo weights cover {} samples, dataset has {}",
            pw.p.len(),
            ds.n()
        )));
    }
    let n = ds.n();
    let y = ds.labels();
    let g = ds.groups();
    // Indices with nonzero pseudo weight; everything pseudo-related sums
    // over these only.
    let live: Vec<usize> = (0..n).filter(|&i| pw.p[i] != 0.0).collect();

    let mut m = Array2::zeros((n + 1, n + 1));
    for i in 0..n {
        for j in i..n {
            let v = (y[i] * y[j]) as f64 * gram.xx(i, j);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    for i in 0..n {
        let mut cross = 0.0;
        for &j in &live {
            cross += g[j] as f64 * pw.p[j] * gram.xc(i, j);
        }
        let v = y[i] as f64 * cross;
        m[(i, n)] = v;
        m[(n, i)] = v;
    }
    let mut corner = 0.0;
    for &i in &live {
        for &j in &live {
            corner += (g[i] * g[j]) as f64 * pw.p[i] * pw.p[j] * gram.cc(i, j);
        }
    }
    m[(n, n)] = corner;

    let mut e = Array1::from_elem(n + 1, -1.0);
    e[n] = 0.0;
    let mut a = Array1::zeros(n + 1);
    for i in 0..n {
        a[i] = y[i] as f64;
    }
    a[n] = pw.y_c;
    let mut lower = Array1::zeros(n + 1);
    lower[n] = -lambda;
    let mut upper = Array1::from_elem(n + 1, nu);
    upper[n] = lambda;
    QuadraticProgram::new(m, e, a, lower, upper)
}

/// A trained recourse-regularized SVM, self-contained for prediction: it
/// retains the training rows (all of them, since both the multipliers and
/// the pseudo weights refer to them).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecourseSvmModel {
    kernel: KernelSpec,
    cost: Vec<f64>,
    /// Per-sample dual multipliers, in `[0, nu]`.
    gammas: Vec<f64>,
    /// Multiplier of the pseudo point, in `[-lambda, lambda]`.
    gamma_pseudo: f64,
    bias: f64,
    /// Feature-space norm of the weight vector, `sqrt(mu' M mu)`.
    norm_w: f64,
    /// Pseudo-point weights the dual was built with.
    pseudo: Vec<f64>,
    pseudo_label_coefficient: f64,
    support_x: Array2<f64>,
    support_y: Vec<i8>,
    support_g: Vec<i8>,
    feature_names: Vec<String>,
    /// True when no strictly-interior support vector existed and the bias
    /// fell back to averaging over every nonzero multiplier.
    bias_from_fallback: bool,
    /// Box bounds the dual was solved under, kept for integrity checks.
    lambda: f64,
    nu: f64,
    /// Cost-scaled copy of `support_x`; rebuilt after deserialization,
    /// absent when the cost vector is all ones.
    #[serde(skip)]
    scaled_support: Option<Array2<f64>>,
}

/// Group-wise recourse summary of a model on a dataset.
///
/// Group recourse is the mean, over the group's predicted-negative samples,
/// of the decision value at the cost-scaled sample divided by the weight
/// norm — a signed, scale-free distance surrogate (negative for points on
/// the rejected side).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecourseEvaluation {
    pub recourse_group_pos: f64,
    pub recourse_group_neg: f64,
    pub negatives_group_pos: usize,
    pub negatives_group_neg: usize,
    /// `|recourse difference|` between groups.
    pub u_abs: f64,
    /// Set when a group had no predicted negatives (its mean is reported as
    /// zero and the gap degenerates to the other group's magnitude).
    pub degenerate: bool,
}

/// One weight-refresh round in [`train_iterative`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Recourse gap of the model of this round, on the training data.
    pub train_u_abs: f64,
    pub qp_converged: bool,
    /// Training predictions that differ from the previous round.
    pub changed_predictions: usize,
}

/// Final model plus the vanilla baseline and the per-round trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RecourseSvmModel,
    /// The `lambda = 0` model from round zero, kept as the comparison
    /// baseline.
    pub vanilla: RecourseSvmModel,
    pub trace: Vec<IterationRecord>,
    /// Whether predictions stabilized before the round cap.
    pub predictions_stable: bool,
}

impl RecourseSvmModel {
    fn rebuild_cache(&mut self) {
        self.scaled_support = if self.cost.iter().all(|c| *c == 1.0) {
            None
        } else {
            Some(scale_rows(self.support_x.clone(), &self.cost))
        };
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn dim(&self) -> usize {
        self.support_x.ncols()
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn norm_w(&self) -> f64 {
        self.norm_w
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.gammas
    }

    pub fn pseudo_multiplier(&self) -> f64 {
        self.gamma_pseudo
    }

    pub fn bias_from_fallback(&self) -> bool {
        self.bias_from_fallback
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Raw decision value `f(x)`; the prediction is its sign.
    pub fn decision_value(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "point has {} features, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self.decision_value_unchecked(x))
    }

    fn decision_value_unchecked(&self, x: ArrayView1<'_, f64>) -> f64 {
        let mut value = self.bias;
        for i in 0..self.gammas.len() {
            if self.gammas[i] != 0.0 {
                value += self.gammas[i]
                    * self.support_y[i] as f64
                    * self.kernel.eval(self.support_x.row(i), x);
            }
        }
        if self.gamma_pseudo != 0.0 {
            let scaled = self.scaled_support.as_ref().unwrap_or(&self.support_x);
            let mut pseudo = 0.0;
            for i in 0..self.pseudo.len() {
                if self.pseudo[i] != 0.0 {
                    pseudo += self.support_g[i] as f64
                        * self.pseudo[i]
                        * self.kernel.eval(scaled.row(i), x);
                }
            }
            value += self.gamma_pseudo * pseudo;
        }
        value
    }

    /// Class prediction; the boundary itself counts as positive.
    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<i8> {
        Ok(if self.decision_value(x)? >= 0.0 {
            1
        } else {
            -1
        })
    }

    /// Predictions for every row of a dataset.
    pub fn predictions(&self, ds: &GroupedDataset) -> Result<Vec<i8>> {
        if ds.dim() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "dataset has {} features, model expects {}",
                ds.dim(),
                self.dim()
            )));
        }
        Ok((0..ds.n())
            .map(|i| {
                if self.decision_value_unchecked(ds.row(i)) >= 0.0 {
                    1
                } else {
                    -1
                }
            })
            .collect())
    }

    /// Fraction of rows whose prediction matches the dataset label.
    pub fn accuracy(&self, ds: &GroupedDataset) -> Result<f64> {
        let preds = self.predictions(ds)?;
        let hits = preds
            .iter()
            .zip(ds.labels())
            .filter(|(p, y)| p == y)
            .count();
        Ok(hits as f64 / ds.n() as f64)
    }

    /// Materializes the weight vector and bias in input space. Only
    /// meaningful for the linear kernel; other kernels return `None`.
    pub fn linear_weights(&self) -> Option<(Array1<f64>, f64)> {
        if self.kernel != KernelSpec::Linear {
            return None;
        }
        let scaled = self.scaled_support.as_ref().unwrap_or(&self.support_x);
        let mut w = Array1::zeros(self.dim());
        for i in 0..self.gammas.len() {
            if self.gammas[i] != 0.0 {
                w.scaled_add(
                    self.gammas[i] * self.support_y[i] as f64,
                    &self.support_x.row(i),
                );
            }
            if self.gamma_pseudo != 0.0 && self.pseudo[i] != 0.0 {
                w.scaled_add(
                    self.gamma_pseudo * self.support_g[i] as f64 * self.pseudo[i],
                    &scaled.row(i),
                );
            }
        }
        Some((w, self.bias))
    }

    /// Integrity checks for a model coming from disk: multipliers inside
    /// their boxes, equality constraint satisfied, norm positive, shapes
    /// consistent.
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        validate_cost(&self.cost, self.dim())?;
        let n = self.support_x.nrows();
        if self.gammas.len() != n
            || self.support_y.len() != n
            || self.support_g.len() != n
            || self.pseudo.len() != n
        {
            return Err(Error::Serialization(format!(
                "inconsistent model arrays: {n} support rows vs {} multipliers, {} labels, {} groups, {} weights",
                self.gammas.len(),
                self.support_y.len(),
                self.support_g.len(),
                self.pseudo.len()
            )));
        }
        if self.feature_names.len() != self.dim() {
            return Err(Error::Serialization(format!(
                "{} feature names for {} columns",
                self.feature_names.len(),
                self.dim()
            )));
        }
        let box_tol = 1e-5 * self.nu.max(1.0);
        if let Some(bad) = self
            .gammas
            .iter()
            .find(|g| !g.is_finite() || **g < -box_tol || **g > self.nu + box_tol)
        {
            return Err(Error::Serialization(format!(
                "multiplier {bad} outside [0, {}]",
                self.nu
            )));
        }
        let pseudo_tol = 1e-5 * self.lambda.max(1.0);
        if !self.gamma_pseudo.is_finite() || self.gamma_pseudo.abs() > self.lambda + pseudo_tol {
            return Err(Error::Serialization(format!(
                "pseudo multiplier {} outside [-{}, {}]",
                self.gamma_pseudo, self.lambda, self.lambda
            )));
        }
        let mut balance = self.pseudo_label_coefficient * self.gamma_pseudo;
        let mut mass = self.pseudo_label_coefficient.abs() * self.gamma_pseudo.abs();
        for i in 0..n {
            balance += self.support_y[i] as f64 * self.gammas[i];
            mass += self.gammas[i].abs();
        }
        if balance.abs() > 1e-5 * mass.max(1.0) {
            return Err(Error::Serialization(format!(
                "equality constraint violated by {balance:.3e}"
            )));
        }
        if !(self.norm_w.is_finite() && self.norm_w > 0.0) {
            return Err(Error::Serialization(format!(
                "weight norm must be positive, got {}",
                self.norm_w
            )));
        }
        if !self.bias.is_finite() {
            return Err(Error::Serialization("non-finite bias".into()));
        }
        Ok(())
    }

    /// Serializes to versioned JSON.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct ModelFile<'a> {
            schema_version: u32,
            model: &'a RecourseSvmModel,
        }
        Ok(serde_json::to_string_pretty(&ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            model: self,
        })?)
    }

    /// Deserializes from versioned JSON, re-checking every model invariant.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct ModelFile {
            schema_version: u32,
            model: RecourseSvmModel,
        }
        let file: ModelFile = serde_json::from_str(text)?;
        if file.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported model schema version {} (expected {MODEL_SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        let mut model = file.model;
        model.rebuild_cache();
        model.validate()?;
        Ok(model)
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

/// Reconstructs a model from a solved dual.
pub fn recover_model(
    ds: &GroupedDataset,
    pw: &PseudoWeights,
    kernel: &KernelSpec,
    cost: &[f64],
    cfg: &TrainConfig,
    solution: &Array1<f64>,
) -> Result<RecourseSvmModel> {
    let gram = DualGram::build(ds, kernel, cost)?;
    recover_model_from_gram(ds, pw, &gram, kernel, cost, cfg, solution)
}

fn recover_model_from_gram(
    ds: &GroupedDataset,
    pw: &PseudoWeights,
    gram: &DualGram,
    kernel: &KernelSpec,
    cost: &[f64],
    cfg: &TrainConfig,
    solution: &Array1<f64>,
) -> Result<RecourseSvmModel> {
    let n = ds.n();
    if solution.len() != n + 1 {
        return Err(Error::InvalidInput(format!(
            "dual solution has {} entries, expected {}",
            solution.len(),
            n + 1
        )));
    }
    let y = ds.labels();
    let g = ds.groups();
    let gammas: Vec<f64> = solution.iter().take(n).copied().collect();
    let gamma_pseudo = solution[n];
    let live: Vec<usize> = (0..n).filter(|&i| pw.p[i] != 0.0).collect();

    // Raw decision values at the training points (bias still missing), and
    // the quadratic form giving the squared weight norm.
    let mut raw = vec![0.0f64; n];
    for i in 0..n {
        let mut v = 0.0;
        for j in 0..n {
            if gammas[j] != 0.0 {
                v += gammas[j] * y[j] as f64 * gram.xx(i, j);
            }
        }
        if gamma_pseudo != 0.0 {
            let mut cross = 0.0;
            for &j in &live {
                cross += g[j] as f64 * pw.p[j] * gram.xc(i, j);
            }
            v += gamma_pseudo * cross;
        }
        raw[i] = v;
    }
    let mut quad = 0.0;
    for i in 0..n {
        if gammas[i] != 0.0 {
            quad += gammas[i] * y[i] as f64 * raw[i];
        }
    }
    if gamma_pseudo != 0.0 {
        // The pseudo row: gamma_p * (sum_i gamma_i y_i M_in + gamma_p M_nn).
        let mut pseudo_row = 0.0;
        for &j in &live {
            let mut inner = 0.0;
            for i in 0..n {
                if gammas[i] != 0.0 {
                    inner += gammas[i] * y[i] as f64 * gram.xc(i, j);
                }
            }
            pseudo_row += g[j] as f64 * pw.p[j] * inner;
        }
        let mut corner = 0.0;
        for &i in &live {
            for &j in &live {
                corner += (g[i] * g[j]) as f64 * pw.p[i] * pw.p[j] * gram.cc(i, j);
            }
        }
        quad += gamma_pseudo * pseudo_row + gamma_pseudo * gamma_pseudo * corner;
    }
    if quad <= 1e-12 {
        return Err(Error::Degenerate(format!(
            "all-zero dual: quadratic form {quad:.3e} leaves no separating direction"
        )));
    }
    let norm_w = quad.sqrt();

    // Bias from strictly-interior support vectors; fall back to every
    // nonzero multiplier when none are interior.
    let thr = cfg.sv_threshold;
    let interior: Vec<usize> = (0..n)
        .filter(|&i| gammas[i] > thr && gammas[i] < cfg.nu - thr)
        .collect();
    let (pool, bias_from_fallback) = if interior.is_empty() {
        let any: Vec<usize> = (0..n).filter(|&i| gammas[i] > thr).collect();
        (any, true)
    } else {
        (interior, false)
    };
    if pool.is_empty() {
        return Err(Error::Degenerate(
            "no support vectors above threshold; cannot recover a bias".into(),
        ));
    }
    let bias = pool.iter().map(|&i| y[i] as f64 - raw[i]).sum::<f64>() / pool.len() as f64;

    let mut model = RecourseSvmModel {
        kernel: *kernel,
        cost: cost.to_vec(),
        gammas,
        gamma_pseudo,
        bias,
        norm_w,
        pseudo: pw.p.clone(),
        pseudo_label_coefficient: pw.y_c,
        support_x: ds.features().to_owned(),
        support_y: y.to_vec(),
        support_g: g.to_vec(),
        feature_names: ds.feature_names().to_vec(),
        bias_from_fallback,
        lambda: cfg.lambda,
        nu: cfg.nu,
        scaled_support: None,
    };
    model.rebuild_cache();
    Ok(model)
}

/// Measures group recourse: for each predicted-negative sample, the decision
/// value at its cost-scaled position over the weight norm, averaged per
/// group.
pub fn evaluate_recourse(
    model: &RecourseSvmModel,
    ds: &GroupedDataset,
) -> Result<RecourseEvaluation> {
    if ds.dim() != model.dim() {
        return Err(Error::InvalidInput(format!(
            "dataset has {} features, model expects {}",
            ds.dim(),
            model.dim()
        )));
    }
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    let cost = model.cost();
    for i in 0..ds.n() {
        let x = ds.row(i);
        if model.decision_value_unchecked(x) >= 0.0 {
            continue;
        }
        let scaled = Array1::from_iter(x.iter().zip(cost.iter()).map(|(v, c)| v * c));
        let r = model.decision_value_unchecked(scaled.view()) / model.norm_w;
        let slot = if ds.groups()[i] == 1 { 0 } else { 1 };
        sums[slot] += r;
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

/// Trains by alternating dual solves with pseudo-weight refreshes.
///
/// Round zero solves the plain SVM (`lambda` forced to 0); each later round
/// rebuilds the weights from the previous round's training predictions and
/// solves with the configured `lambda`, stopping once predictions repeat or
/// the round cap is hit.
pub fn train_iterative(
    ds: &GroupedDataset,
    kernel: &KernelSpec,
    cost: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if !ds.labels().contains(&1) || !ds.labels().contains(&-1) {
        return Err(Error::Data(
            "training requires both classes to be present".into(),
        ));
    }
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "lambda must be finite and non-negative, got {}",
            cfg.lambda
        )));
    }
    let gram = DualGram::build(ds, kernel, cost)?;

    // Round zero: vanilla SVM. The pseudo variable is boxed to zero, so the
    // weights (built from the labels, the only "predictions" available) are
    // inert.
    let pw0 = pseudo_weights(ds, ds.labels(), cfg.denominator).map_err(Error::at_iteration(0))?;
    let vanilla_cfg = TrainConfig {
        lambda: 0.0,
        ..*cfg
    };
    let qp0 = build_dual_from_gram(ds, &pw0, &gram, 0.0, cfg.nu).map_err(Error::at_iteration(0))?;
    let sol0 = qp0.solve(&cfg.solver).map_err(Error::at_iteration(0))?;
    let vanilla = recover_model_from_gram(ds, &pw0, &gram, kernel, cost, &vanilla_cfg, &sol0.mu)
        .map_err(Error::at_iteration(0))?;
    let mut predictions = vanilla.predictions(ds)?;
    let mut trace = vec![IterationRecord {
        iteration: 0,
        train_u_abs: evaluate_recourse(&vanilla, ds)?.u_abs,
        qp_converged: sol0.converged,
        changed_predictions: 0,
    }];

    if cfg.lambda == 0.0 || cfg.max_iters == 0 {
        return Ok(TrainOutcome {
            model: vanilla.clone(),
            vanilla,
            trace,
            predictions_stable: true,
        });
    }

    let mut current: Option<RecourseSvmModel> = None;
    let mut stable = false;
    for round in 1..=cfg.max_iters {
        let pw = pseudo_weights(ds, &predictions, cfg.denominator)
            .map_err(Error::at_iteration(round))?;
        let qp = build_dual_from_gram(ds, &pw, &gram, cfg.lambda, cfg.nu)
            .map_err(Error::at_iteration(round))?;
        let sol = qp.solve(&cfg.solver).map_err(Error::at_iteration(round))?;
        let model = recover_model_from_gram(ds, &pw, &gram, kernel, cost, cfg, &sol.mu)
            .map_err(Error::at_iteration(round))?;
        let new_predictions = model.predictions(ds)?;
        let changed = new_predictions
            .iter()
            .zip(predictions.iter())
            .filter(|(a, b)| a != b)
            .count();
        trace.push(IterationRecord {
            iteration: round,
            train_u_abs: evaluate_recourse(&model, ds)?.u_abs,
            qp_converged: sol.converged,
            changed_predictions: changed,
        });
        predictions = new_predictions;
        current = Some(model);
        if changed == 0 {
            stable = true;
            break;
        }
    }
    Ok(TrainOutcome {
        model: current.expect("at least one regularized round ran"),
        vanilla,
        trace,
        predictions_stable: stable,
    })
}

/// A minimal boundary-crossing change for one negatively classified point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Flipset {
    /// The modified feature vector, classified positive.
    pub target: Vec<f64>,
    /// `target - x`.
    pub delta: Vec<f64>,
    /// Cost-scaled length of `delta`.
    pub cost_distance: f64,
    /// Decision value at `target` (non-negative).
    pub achieved_value: f64,
}

/// Computes a flipset for `x`, which must currently be classified negative.
///
/// Linear kernel: exact closed-form projection onto the hyperplane under the
/// cost metric, nudged a hair past the boundary. Other kernels: bisection
/// along the segment to the nearest positively classified training point,
/// then a local search that walks the crossing point toward `x` while
/// staying on the positive side. The result never costs more than going all
/// the way to that training point.
pub fn flipset(model: &RecourseSvmModel, x: ArrayView1<'_, f64>) -> Result<Flipset> {
    let f_x = model.decision_value(x)?;
    if f_x >= 0.0 {
        return Err(Error::InvalidInput(
            "flipset requested for a point already classified positive".into(),
        ));
    }
    let cost = model.cost();
    let cost_dist = |z: &Array1<f64>| -> f64 {
        z.iter()
            .zip(x.iter())
            .zip(cost.iter())
            .map(|((zi, xi), c)| {
                let d = c * (zi - xi);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    };

    if let Some((w, _)) = model.linear_weights() {
        // Minimize ||C(z - x)|| subject to w'z + b = tau: move along
        // C^{-2} w.
        let denom: f64 = w
            .iter()
            .zip(cost.iter())
            .map(|(wj, c)| (wj / c) * (wj / c))
            .sum();
        if denom <= 1e-300 {
            return Err(Error::Degenerate(
                "zero weight vector; no direction crosses the boundary".into(),
            ));
        }
        let tau = 1e-6 * denom.sqrt();
        let step = (f_x - tau) / denom;
        let target = Array1::from_iter(
            x.iter()
                .zip(w.iter().zip(cost.iter()))
                .map(|(xi, (wj, c))| xi - step * wj / (c * c)),
        );
        let achieved = model.decision_value(target.view())?;
        let delta = &target - &x.to_owned();
        return Ok(Flipset {
            cost_distance: cost_dist(&target),
            target: target.to_vec(),
            delta: delta.to_vec(),
            achieved_value: achieved,
        });
    }

    // Candidate anchors: training rows the model itself classifies positive.
    let mut best: Option<(f64, usize)> = None;
    for i in 0..model.support_x.nrows() {
        let row = model.support_x.row(i);
        if model.decision_value_unchecked(row) >= 0.0 {
            let d = cost_dist(&row.to_owned());
            if best.map(|(bd, _)| d < bd).unwrap_or(true) {
                best = Some((d, i));
            }
        }
    }
    let (_, anchor_idx) = best.ok_or_else(|| {
        Error::FlipsetUnavailable("no training point is classified positive by this model".into())
    })?;
    let anchor = model.support_x.row(anchor_idx).to_owned();

    // Bisect the segment [x, anchor] down to the boundary crossing, keeping
    // the positive end.
    let x_owned = x.to_owned();
    let point_at = |s: f64| -> Array1<f64> { &x_owned + &(s * (&anchor - &x_owned)) };
    let mut lo = 0.0f64; // f < 0 side
    let mut hi = 1.0f64; // f >= 0 side
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if model.decision_value_unchecked(point_at(mid).view()) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut z = point_at(hi);

    // Local refinement: pull z toward x along the cost metric, re-projecting
    // onto the positive side with Newton steps on a numeric gradient.
    let mut eta = cost_dist(&z) / 4.0;
    let dim = z.len();
    for _ in 0..50 {
        if eta < 1e-10 {
            break;
        }
        let mut candidate = z.clone();
        for j in 0..dim {
            let pull = cost[j] * cost[j] * (z[j] - x_owned[j]);
            candidate[j] -= eta * pull;
        }
        if model.decision_value_unchecked(candidate.view()) < 0.0 {
            // Newton-project back onto the boundary along the gradient.
            let mut ok = false;
            for _ in 0..3 {
                let f_c = model.decision_value_unchecked(candidate.view());
                if f_c >= 0.0 {
                    ok = true;
                    break;
                }
                let h = 1e-6 * (1.0 + candidate.iter().fold(0.0f64, |a, v| a.max(v.abs())));
                let mut grad = Array1::zeros(dim);
                for j in 0..dim {
                    let mut plus = candidate.clone();
                    let mut minus = candidate.clone();
                    plus[j] += h;
                    minus[j] -= h;
                    grad[j] = (model.decision_value_unchecked(plus.view())
                        - model.decision_value_unchecked(minus.view()))
                        / (2.0 * h);
                }
                let gg = grad.dot(&grad);
                if gg <= 1e-300 {
                    break;
                }
                let shift = (1e-9 - f_c) / gg;
                candidate.scaled_add(shift, &grad);
            }
            if !ok && model.decision_value_unchecked(candidate.view()) < 0.0 {
                eta *= 0.5;
                continue;
            }
        }
        if cost_dist(&candidate) < cost_dist(&z) - 1e-12 {
            z = candidate;
        } else {
            eta *= 0.5;
        }
    }

    let achieved = model.decision_value_unchecked(z.view());
    debug_assert!(achieved >= 0.0);
    let delta = &z - &x_owned;
    Ok(Flipset {
        cost_distance: cost_dist(&z),
        target: z.to_vec(),
        delta: delta.to_vec(),
        achieved_value: achieved,
    })
}
