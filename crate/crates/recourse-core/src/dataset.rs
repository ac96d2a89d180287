//! Grouped binary-classification data: loading, synthesis, and splitting.
//!
//! Every sample carries a label in `{-1, +1}` and a group membership in
//! `{-1, +1}`; recourse metrics compare the two groups, so a dataset with one
//! group missing is rejected outright.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed;

/// Per-feature centering/scaling actually applied to a dataset.
///
/// `sds` entries are the divisors used; a zero-variance feature keeps a
/// divisor of 1 (centered but not scaled).
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

/// A dense feature matrix with binary labels and binary group memberships.
///
/// Invariants (enforced at construction): at least two rows, consistent row
/// counts, labels and groups in `{-1, +1}`, both groups represented, all
/// feature values finite.
#[derive(Debug, Clone)]
pub struct GroupedDataset {
    features: Array2<f64>,
    labels: Vec<i8>,
    groups: Vec<i8>,
    feature_names: Vec<String>,
    standardization: Option<Standardization>,
}

impl GroupedDataset {
    /// Builds a dataset, validating every invariant.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<i8>,
        groups: Vec<i8>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if n < 2 {
            return Err(Error::Data(format!(
                "dataset needs at least 2 rows, got {n}"
            )));
        }
        if labels.len() != n || groups.len() != n {
            return Err(Error::Data(format!(
                "row count mismatch: {} features, {} labels, {} groups",
                n,
                labels.len(),
                groups.len()
            )));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::Data(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        if let Some(bad) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature value {bad}")));
        }
        for (what, vals) in [("label", &labels), ("group", &groups)] {
            if let Some(v) = vals.iter().find(|v| !matches!(**v, -1 | 1)) {
                return Err(Error::Data(format!("{what} value {v} outside {{-1, +1}}")));
            }
        }
        if !groups.contains(&1) || !groups.contains(&-1) {
            return Err(Error::Data(
                "both groups must be present; one side is empty".into(),
            ));
        }
        Ok(GroupedDataset {
            features,
            labels,
            groups,
            feature_names,
            standardization: None,
        })
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn groups(&self) -> &[i8] {
        &self.groups
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// The centering/scaling applied at load time, when any.
    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    /// Sample indices partitioned by `(label, group)`, in the fixed cell
    /// order `(+1,+1), (+1,-1), (-1,+1), (-1,-1)`.
    pub fn cell_indices(&self) -> [(i8, i8, Vec<usize>); 4] {
        let mut cells = [
            (1i8, 1i8, Vec::new()),
            (1, -1, Vec::new()),
            (-1, 1, Vec::new()),
            (-1, -1, Vec::new()),
        ];
        for i in 0..self.n() {
            let (y, g) = (self.labels[i], self.groups[i]);
            let slot = match (y, g) {
                (1, 1) => 0,
                (1, -1) => 1,
                (-1, 1) => 2,
                _ => 3,
            };
            cells[slot].2.push(i);
        }
        cells
    }

    /// New dataset containing `indices`' rows, in the given order.
    ///
    /// Fails when the selection empties a group (the result must satisfy the
    /// same invariants as any dataset).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(Error::InvalidInput(format!(
                "subset index {bad} out of range for {} rows",
                self.n()
            )));
        }
        let mut features = Array2::zeros((indices.len(), self.dim()));
        for (r, &i) in indices.iter().enumerate() {
            features.row_mut(r).assign(&self.features.row(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let groups = indices.iter().map(|&i| self.groups[i]).collect();
        let mut out = GroupedDataset::new(features, labels, groups, self.feature_names.clone())?;
        out.standardization = self.standardization.clone();
        Ok(out)
    }

    /// Draws `size` rows without replacement (the whole dataset when `size`
    /// is at least `n`). Row order follows the original dataset.
    pub fn subsample(&self, size: usize, seed_value: u64) -> Result<Self> {
        if size >= self.n() {
            return Ok(self.clone());
        }
        if size < 2 {
            return Err(Error::InvalidInput(format!(
                "subsample size must be at least 2, got {size}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(seed_value, 0x5AB5));
        let mut idx: Vec<usize> = (0..self.n()).collect();
        idx.shuffle(&mut rng);
        let mut chosen: Vec<usize> = idx.into_iter().take(size).collect();
        chosen.sort_unstable();
        self.subset(&chosen)
    }
}

/// How to turn a raw CSV file into a [`GroupedDataset`].
#[derive(Debug, Clone)]
pub struct PreprocessSpec {
    /// Column holding the class; cells equal to `positive_target` become +1,
    /// everything else -1.
    pub target_column: String,
    pub positive_target: String,
    /// Column holding the group membership; same mapping via
    /// `positive_group`.
    pub group_column: String,
    pub positive_group: String,
    /// Center each feature to mean 0 and scale to standard deviation 1
    /// (population convention). Zero-variance features are centered but left
    /// unscaled, with a warning.
    pub standardize: bool,
    /// Drop rows containing empty or unparseable cells instead of failing.
    pub drop_rows_with_missing: bool,
    /// Keep the group column among the features as well (some benchmark
    /// layouts count the protected attribute as a regular feature).
    pub keep_group_feature: bool,
}

impl PreprocessSpec {
    /// Spec with standardization on and the permissive flags off.
    pub fn new(
        target_column: impl Into<String>,
        positive_target: impl Into<String>,
        group_column: impl Into<String>,
        positive_group: impl Into<String>,
    ) -> Self {
        PreprocessSpec {
            target_column: target_column.into(),
            positive_target: positive_target.into(),
            group_column: group_column.into(),
            positive_group: positive_group.into(),
            standardize: true,
            drop_rows_with_missing: false,
            keep_group_feature: false,
        }
    }
}

/// Reads a CSV file with a header row into a grouped dataset.
///
/// All columns other than target and group become features (plus the group
/// column itself when `keep_group_feature` is set). Feature cells must parse
/// as finite numbers; empty cells count as missing. Missing or unparseable
/// cells either drop the row (`drop_rows_with_missing`) or fail the load.
pub fn load_csv(path: impl AsRef<Path>, spec: &PreprocessSpec) -> Result<GroupedDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;

    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let target_idx = find(&spec.target_column).ok_or_else(|| {
        Error::Data(format!(
            "target column {:?} not found in {}",
            spec.target_column,
            path.display()
        ))
    })?;
    let group_idx = find(&spec.group_column).ok_or_else(|| {
        Error::Data(format!(
            "group column {:?} not found in {}",
            spec.group_column,
            path.display()
        ))
    })?;
    if target_idx == group_idx {
        return Err(Error::Data(format!(
            "target and group both map to column {:?}",
            spec.target_column
        )));
    }

    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != target_idx && (c != group_idx || spec.keep_group_feature))
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::Data("no feature columns left".into()));
    }
    let feature_names: Vec<String> = feature_cols
        .iter()
        .map(|&c| headers[c].to_string())
        .collect();

    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    let mut dropped = 0usize;
    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let mut parsed: Vec<f64> = Vec::with_capacity(feature_cols.len());
        let mut bad_cell: Option<String> = None;
        for &c in &feature_cols {
            let cell = record.get(c).unwrap_or("");
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => parsed.push(v),
                _ => {
                    bad_cell = Some(format!(
                        "row {} column {:?}: cell {:?} is not a finite number",
                        row_no + 2, // 1-based, counting the header line
                        headers[c].to_string(),
                        cell
                    ));
                    break;
                }
            }
        }
        let target_cell = record.get(target_idx).unwrap_or("");
        let group_cell = record.get(group_idx).unwrap_or("");
        if bad_cell.is_none() && (target_cell.is_empty() || group_cell.is_empty()) {
            bad_cell = Some(format!("row {}: empty target or group cell", row_no + 2));
        }
        if let Some(why) = bad_cell {
            if spec.drop_rows_with_missing {
                dropped += 1;
                continue;
            }
            return Err(Error::Data(format!("{} ({})", why, path.display())));
        }
        rows.extend_from_slice(&parsed);
        labels.push(if target_cell == spec.positive_target {
            1
        } else {
            -1
        });
        groups.push(if group_cell == spec.positive_group {
            1
        } else {
            -1
        });
    }
    if dropped > 0 {
        log::warn!(
            "dropped {dropped} rows with missing cells while loading {}",
            path.display()
        );
    }

    let n = labels.len();
    let d = feature_cols.len();
    let features = Array2::from_shape_vec((n, d), rows)
        .map_err(|e| Error::Data(format!("ragged csv content: {e}")))?;
    let mut ds = GroupedDataset::new(features, labels, groups, feature_names)?;
    if spec.standardize {
        standardize_in_place(&mut ds);
    }
    Ok(ds)
}

/// Centers every feature to mean 0 and scales to population standard
/// deviation 1; zero-variance features are centered only. The applied
/// transform is recorded on the dataset.
pub fn standardize_in_place(ds: &mut GroupedDataset) {
    let n = ds.n() as f64;
    let mut means = Vec::with_capacity(ds.dim());
    let mut sds = Vec::with_capacity(ds.dim());
    for j in 0..ds.dim() {
        let col = ds.features.column(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        let divisor = if sd < 1e-12 {
            log::warn!(
                "feature {:?} has zero variance; centered but left unscaled",
                ds.feature_names[j]
            );
            1.0
        } else {
            sd
        };
        means.push(mean);
        sds.push(divisor);
    }
    for j in 0..ds.dim() {
        let (mean, divisor) = (means[j], sds[j]);
        for v in ds.features.column_mut(j) {
            *v = (*v - mean) / divisor;
        }
    }
    ds.standardization = Some(Standardization { means, sds });
}

/// Writes a dataset back to CSV: feature columns under their names, then
/// `label` and `group` as signed integers.
///
/// Floats are written in shortest round-trip form, so loading the file again
/// (without standardization) reproduces the dataset bit for bit.
pub fn write_csv(ds: &GroupedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for reserved in ["label", "group"] {
        if ds.feature_names.iter().any(|n| n == reserved) {
            return Err(Error::InvalidInput(format!(
                "feature name {reserved:?} collides with an output column"
            )));
        }
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header: Vec<String> = ds.feature_names.clone();
    header.push("label".into());
    header.push("group".into());
    writer
        .write_record(&header)
        .map_err(|e| Error::csv(path, e))?;
    for i in 0..ds.n() {
        let mut record: Vec<String> = ds.row(i).iter().map(|v| format!("{v}")).collect();
        record.push(ds.labels[i].to_string());
        record.push(ds.groups[i].to_string());
        writer
            .write_record(&record)
            .map_err(|e| Error::csv(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Stratified train/validation split.
///
/// Each `(label, group)` cell is shuffled and split so the train side gets
/// `round(train_fraction * cell size)` rows, clamped so that every cell with
/// at least two rows keeps one row on each side. Single-row cells go to the
/// train side with a warning.
pub fn split(
    ds: &GroupedDataset,
    train_fraction: f64,
    seed_value: u64,
) -> Result<(GroupedDataset, GroupedDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (slot, (label, grp, mut idx)) in ds.cell_indices().into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() == 1 {
            log::warn!("cell (label {label}, group {grp}) has a single row; assigning it to train");
            train_idx.push(idx[0]);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(seed_value, slot as u64));
        idx.shuffle(&mut rng);
        let want = (train_fraction * idx.len() as f64).round() as usize;
        let take = want.clamp(1, idx.len() - 1);
        train_idx.extend_from_slice(&idx[..take]);
        val_idx.extend_from_slice(&idx[take..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    if val_idx.is_empty() {
        return Err(Error::Data(
            "validation side of the split came out empty".into(),
        ));
    }
    Ok((ds.subset(&train_idx)?, ds.subset(&val_idx)?))
}

/// Which synthetic geometry to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Linearly separable: one positive blob shared by both groups, negative
    /// blobs mirrored left/right with the disadvantaged group's blob pushed
    /// farther from the boundary by `group_shift`.
    LinearShiftedGaussians,
    /// Positive cluster at the origin, negatives on half-rings of radius 3
    /// (and `3 + group_shift` for the disadvantaged group); separable by a
    /// degree-2 polynomial boundary but not linearly.
    RingVsCluster,
}

/// Parameters for [`make_synthetic`].
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    /// Rows per `(label, group)` cell; total size is four times this.
    pub n_per_cell: usize,
    /// Extra distance-to-boundary imposed on group -1's negatives. Zero makes
    /// the two groups exact mirror images of each other.
    pub group_shift: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

/// Generates a two-dimensional synthetic dataset with a controlled recourse
/// disparity between groups.
///
/// Noise draws are shared between the two groups through an x-mirror, so at
/// `group_shift = 0` the dataset is exactly symmetric under
/// `(x, y, group) -> (-x, y, -group)` and any symmetric learner incurs a
/// recourse gap of zero.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<GroupedDataset> {
    if spec.n_per_cell == 0 {
        return Err(Error::InvalidInput("n_per_cell must be positive".into()));
    }
    if !(spec.noise_sd.is_finite() && spec.noise_sd >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "noise_sd must be a finite non-negative number, got {}",
            spec.noise_sd
        )));
    }
    if !spec.group_shift.is_finite() {
        return Err(Error::InvalidInput("group_shift must be finite".into()));
    }
    let m = spec.n_per_cell;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(spec.seed, 0x11AD));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let sd = spec.noise_sd;

    // Row layout: positives of group +1, positives of group -1, negatives of
    // group +1, negatives of group -1.
    let mut features = Array2::zeros((4 * m, 2));
    let mut labels = vec![0i8; 4 * m];
    let mut groups = vec![0i8; 4 * m];
    for i in 0..m {
        let (z1, z2) = (normal.sample(&mut rng), normal.sample(&mut rng));
        let (w1, w2) = (normal.sample(&mut rng), normal.sample(&mut rng));
        let (pos_a, pos_b, neg_a, neg_b) = match spec.kind {
            SyntheticKind::LinearShiftedGaussians => (
                [sd * z1, 2.0 + sd * z2],
                [-(sd * z1), 2.0 + sd * z2],
                [-3.0 + sd * w1, -2.0 + sd * w2],
                [-(-3.0 + sd * w1), -2.0 - spec.group_shift + sd * w2],
            ),
            SyntheticKind::RingVsCluster => {
                let theta = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
                let r_near = 3.0 + sd * w1;
                let r_far = 3.0 + spec.group_shift + sd * w1;
                (
                    [sd * z1, sd * z2],
                    [-(sd * z1), sd * z2],
                    [r_near * theta.cos(), r_near * theta.sin()],
                    [-(r_far * theta.cos()), r_far * theta.sin()],
                )
            }
        };
        for (slot, point, label, grp) in [
            (0, pos_a, 1i8, 1i8),
            (1, pos_b, 1, -1),
            (2, neg_a, -1, 1),
            (3, neg_b, -1, -1),
        ] {
            let row = slot * m + i;
            features[(row, 0)] = point[0];
            features[(row, 1)] = point[1];
            labels[row] = label;
            groups[row] = grp;
        }
    }
    GroupedDataset::new(features, labels, groups, vec!["x1".into(), "x2".into()])
}
