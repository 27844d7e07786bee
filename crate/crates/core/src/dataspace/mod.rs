//! Dataset representation, normalization and class priors.
//!
//! All values here are immutable once constructed; constructors validate the
//! invariants (finite entries, consistent dimensions, labels in range) so the
//! rest of the crate can rely on them.

mod io;
mod synthetic;

pub use io::{load_dataset, save_dataset, DatasetManifest};
pub use synthetic::{make_synthetic_tzsl, synthetic_class_means, ClassCounts, SyntheticSpec};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scales `v` onto the sphere of radius `r`.
pub fn l2_normalize(v: &[f64], r: f64) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    l2_normalize_in_place(&mut out, r)?;
    Ok(out)
}

pub(crate) fn l2_normalize_in_place(v: &mut [f64], r: f64) -> Result<()> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::invalid(format!("radius must be positive, got {r}")));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Degenerate(
            "feature vector has zero or non-finite norm".into(),
        ));
    }
    let scale = r / norm;
    v.iter_mut().for_each(|x| *x *= scale);
    Ok(())
}

/// Min-Max rescaling of a single vector into `[0, 1]`.
pub fn minmax_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if v.is_empty() || !(hi > lo) {
        return Err(Error::Degenerate("vector has zero range".into()));
    }
    let span = hi - lo;
    Ok(v.iter().map(|x| (x - lo) / span).collect())
}

fn check_finite(data: &Array2<f64>, what: &str) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// One feature vector per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Array2<f64>);

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::shape(format!(
                "feature matrix must be non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        check_finite(&data, "feature matrix")?;
        Ok(FeatureMatrix(data))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Array2<f64> {
        self.0.select(Axis(0), idx)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Applies `f` to each row, re-validating the result.
    pub fn map_rows(&self, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Self> {
        let mut out = Array2::zeros(self.0.raw_dim());
        for (src, mut dst) in self.0.rows().into_iter().zip(out.rows_mut()) {
            let row = f(&src.to_vec())?;
            dst.assign(&Array1::from(row));
        }
        FeatureMatrix::new(out)
    }
}

/// One attribute vector per class.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeTable(Array2<f64>);

impl AttributeTable {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::shape("attribute table must be non-empty"));
        }
        check_finite(&data, "attribute table")?;
        Ok(AttributeTable(data))
    }

    pub fn num_classes(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, class: usize) -> ArrayView1<'_, f64> {
        self.0.row(class)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    /// Gathers one attribute row per label.
    pub fn lookup(&self, labels: &[usize]) -> Array2<f64> {
        self.0.select(Axis(0), labels)
    }

    pub fn l2_normalized(&self, radius: f64) -> Result<Self> {
        let mut data = self.0.clone();
        for mut row in data.rows_mut() {
            l2_normalize_in_place(row.as_slice_mut().expect("standard layout"), radius)?;
        }
        Ok(AttributeTable(data))
    }
}

/// A probability vector over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassPrior {
    probs: Vec<f64>,
}

impl ClassPrior {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("class prior must have at least one class"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(format!(
                "class prior entries must be finite and non-negative: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::invalid(format!(
                "class prior sums to {sum}, expected 1"
            )));
        }
        Ok(ClassPrior { probs })
    }

    /// Normalizes non-negative weights into a prior.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || !(sum > 0.0) {
            return Err(Error::invalid(format!(
                "cannot normalize weights {weights:?} into a prior"
            )));
        }
        ClassPrior::new(weights.iter().map(|w| w / sum).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("uniform prior needs at least one class"));
        }
        Ok(ClassPrior {
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }
}

/// Fraction of `labels` falling in each class.
pub fn empirical_class_prior(labels: &[usize], num_classes: usize) -> Result<ClassPrior> {
    if labels.is_empty() {
        return Err(Error::invalid("cannot estimate a prior from zero labels"));
    }
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        if y >= num_classes {
            return Err(Error::LabelOutOfRange {
                field: "labels".into(),
                label: y as i64,
                num_classes,
            });
        }
        counts[y] += 1;
    }
    let total = labels.len() as f64;
    let mut probs: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    // Keep the sum within tolerance regardless of rounding.
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    ClassPrior::new(probs)
}

/// How visual features are normalized at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureNormalization {
    L2,
    MinMax,
    None,
}

/// Normalization applied by [`load_dataset`]. Attributes are always brought
/// to the same radius as features unless `normalize_attributes` is off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocessing {
    pub features: FeatureNormalization,
    pub radius: f64,
    pub normalize_attributes: bool,
}

impl Preprocessing {
    pub fn l2(radius: f64) -> Self {
        Preprocessing {
            features: FeatureNormalization::L2,
            radius,
            normalize_attributes: true,
        }
    }

    pub fn min_max(radius: f64) -> Self {
        Preprocessing {
            features: FeatureNormalization::MinMax,
            radius,
            normalize_attributes: true,
        }
    }

    /// Leaves every payload untouched.
    pub fn raw() -> Self {
        Preprocessing {
            features: FeatureNormalization::None,
            radius: 1.0,
            normalize_attributes: false,
        }
    }

    fn apply_features(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        match self.features {
            FeatureNormalization::L2 => m.map_rows(|v| l2_normalize(v, self.radius)),
            FeatureNormalization::MinMax => m.map_rows(minmax_normalize),
            FeatureNormalization::None => Ok(m.clone()),
        }
    }
}

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing::l2(1.0)
    }
}

/// Features plus integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
}

/// Raw parts for [`SplitDataset::new`].
#[derive(Debug, Clone)]
pub struct DatasetParts {
    pub seen_features: FeatureMatrix,
    pub seen_labels: Vec<usize>,
    pub unseen_features: FeatureMatrix,
    pub seen_attributes: AttributeTable,
    pub unseen_attributes: AttributeTable,
    pub unseen_labels_eval: Option<Vec<usize>>,
    pub seen_test: Option<LabeledFeatures>,
}

/// The full transductive training input, plus optional evaluation labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    seen_features: FeatureMatrix,
    seen_labels: Vec<usize>,
    unseen_features: FeatureMatrix,
    seen_attributes: AttributeTable,
    unseen_attributes: AttributeTable,
    unseen_labels_eval: Option<Vec<usize>>,
    seen_test: Option<LabeledFeatures>,
    preprocessing: Option<Preprocessing>,
}

fn check_labels(labels: &[usize], rows: usize, num_classes: usize, field: &str) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape(format!(
            "{field}: {} labels for {rows} feature rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::LabelOutOfRange {
            field: field.to_string(),
            label: bad as i64,
            num_classes,
        });
    }
    Ok(())
}

impl SplitDataset {
    pub fn new(parts: DatasetParts) -> Result<Self> {
        let n_s = parts.seen_attributes.num_classes();
        let n_u = parts.unseen_attributes.num_classes();
        check_labels(
            &parts.seen_labels,
            parts.seen_features.rows(),
            n_s,
            "seen_labels",
        )?;
        if parts.seen_features.dim() != parts.unseen_features.dim() {
            return Err(Error::shape(format!(
                "seen feature dim {} != unseen feature dim {}",
                parts.seen_features.dim(),
                parts.unseen_features.dim()
            )));
        }
        if parts.seen_attributes.dim() != parts.unseen_attributes.dim() {
            return Err(Error::shape(format!(
                "seen attribute dim {} != unseen attribute dim {}",
                parts.seen_attributes.dim(),
                parts.unseen_attributes.dim()
            )));
        }
        if let Some(labels) = &parts.unseen_labels_eval {
            check_labels(
                labels,
                parts.unseen_features.rows(),
                n_u,
                "unseen_labels_eval",
            )?;
        }
        if let Some(test) = &parts.seen_test {
            if test.features.dim() != parts.seen_features.dim() {
                return Err(Error::shape("seen test feature dim differs from seen features"));
            }
            check_labels(&test.labels, test.features.rows(), n_s, "seen_test_labels")?;
        }
        Ok(SplitDataset {
            seen_features: parts.seen_features,
            seen_labels: parts.seen_labels,
            unseen_features: parts.unseen_features,
            seen_attributes: parts.seen_attributes,
            unseen_attributes: parts.unseen_attributes,
            unseen_labels_eval: parts.unseen_labels_eval,
            seen_test: parts.seen_test,
            preprocessing: None,
        })
    }

    pub fn into_parts(self) -> DatasetParts {
        DatasetParts {
            seen_features: self.seen_features,
            seen_labels: self.seen_labels,
            unseen_features: self.unseen_features,
            seen_attributes: self.seen_attributes,
            unseen_attributes: self.unseen_attributes,
            unseen_labels_eval: self.unseen_labels_eval,
            seen_test: self.seen_test,
        }
    }

    /// Returns a copy with features and attributes normalized.
    pub fn preprocessed(&self, pre: &Preprocessing) -> Result<Self> {
        let mut out = self.clone();
        out.seen_features = pre.apply_features(&self.seen_features)?;
        out.unseen_features = pre.apply_features(&self.unseen_features)?;
        if let Some(test) = &self.seen_test {
            out.seen_test = Some(LabeledFeatures {
                features: pre.apply_features(&test.features)?,
                labels: test.labels.clone(),
            });
        }
        if pre.normalize_attributes {
            out.seen_attributes = self.seen_attributes.l2_normalized(pre.radius)?;
            out.unseen_attributes = self.unseen_attributes.l2_normalized(pre.radius)?;
        }
        out.preprocessing = Some(*pre);
        Ok(out)
    }

    /// Replaces seen, unseen and seen-test features, keeping everything else.
    pub fn with_features(
        &self,
        seen: FeatureMatrix,
        unseen: FeatureMatrix,
        seen_test: Option<FeatureMatrix>,
    ) -> Result<Self> {
        let mut parts = self.clone().into_parts();
        parts.seen_features = seen;
        parts.unseen_features = unseen;
        parts.seen_test = match (parts.seen_test, seen_test) {
            (Some(old), Some(features)) => Some(LabeledFeatures {
                features,
                labels: old.labels,
            }),
            (_, None) => None,
            (None, Some(_)) => {
                return Err(Error::invalid("dataset has no seen test split to replace"))
            }
        };
        let mut out = SplitDataset::new(parts)?;
        out.preprocessing = self.preprocessing;
        Ok(out)
    }

    pub fn seen_features(&self) -> &FeatureMatrix {
        &self.seen_features
    }

    pub fn seen_labels(&self) -> &[usize] {
        &self.seen_labels
    }

    pub fn unseen_features(&self) -> &FeatureMatrix {
        &self.unseen_features
    }

    pub fn seen_attributes(&self) -> &AttributeTable {
        &self.seen_attributes
    }

    pub fn unseen_attributes(&self) -> &AttributeTable {
        &self.unseen_attributes
    }

    pub fn unseen_labels_eval(&self) -> Option<&[usize]> {
        self.unseen_labels_eval.as_deref()
    }

    pub fn seen_test(&self) -> Option<&LabeledFeatures> {
        self.seen_test.as_ref()
    }

    pub fn preprocessing(&self) -> Option<&Preprocessing> {
        self.preprocessing.as_ref()
    }

    pub fn num_seen_classes(&self) -> usize {
        self.seen_attributes.num_classes()
    }

    pub fn num_unseen_classes(&self) -> usize {
        self.unseen_attributes.num_classes()
    }

    pub fn feature_dim(&self) -> usize {
        self.seen_features.dim()
    }

    pub fn attribute_dim(&self) -> usize {
        self.seen_attributes.dim()
    }

    /// Ground-truth unseen prior, when evaluation labels exist.
    pub fn true_unseen_prior(&self) -> Option<ClassPrior> {
        self.unseen_labels_eval
            .as_ref()
            .and_then(|l| empirical_class_prior(l, self.num_unseen_classes()).ok())
    }

    /// The view handed to inductive training: it has no unseen features.
    pub fn inductive_view(&self) -> InductiveView<'_> {
        InductiveView {
            seen_features: &self.seen_features,
            seen_labels: &self.seen_labels,
            seen_attributes: &self.seen_attributes,
            unseen_attributes: &self.unseen_attributes,
            preprocessing: self.preprocessing.as_ref(),
        }
    }

    /// Rounds every feature and attribute value through `f32`.
    pub fn quantized_f32(&self) -> Result<Self> {
        let q = |m: &FeatureMatrix| FeatureMatrix::new(m.0.mapv(|v| v as f32 as f64));
        let mut out = self.clone();
        out.seen_features = q(&self.seen_features)?;
        out.unseen_features = q(&self.unseen_features)?;
        if let Some(t) = &mut out.seen_test {
            t.features = q(&t.features)?;
        }
        out.seen_attributes = AttributeTable::new(self.seen_attributes.0.mapv(|v| v as f32 as f64))?;
        out.unseen_attributes = AttributeTable::new(self.unseen_attributes.0.mapv(|v| v as f32 as f64))?;
        Ok(out)
    }
}

/// Seen data and both attribute tables; unseen visual features are not
/// reachable through this type.
#[derive(Debug, Clone, Copy)]
pub struct InductiveView<'a> {
    pub seen_features: &'a FeatureMatrix,
    pub seen_labels: &'a [usize],
    pub seen_attributes: &'a AttributeTable,
    pub unseen_attributes: &'a AttributeTable,
    pub preprocessing: Option<&'a Preprocessing>,
}
