use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    AttributeTable, DatasetParts, FeatureMatrix, LabeledFeatures, Preprocessing, SplitDataset,
};
use crate::blob::{self, BlobRef};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// `manifest.json` of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seen_features: BlobRef,
    pub seen_labels: BlobRef,
    pub unseen_features: BlobRef,
    pub seen_attributes: BlobRef,
    pub unseen_attributes: BlobRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unseen_labels_eval: Option<BlobRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seen_test_features: Option<BlobRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seen_test_labels: Option<BlobRef>,
}

fn labels(dir: &Path, blob: &BlobRef, field: &str, num_classes: usize) -> Result<Vec<usize>> {
    blob::read_labels(dir, blob, field)?
        .into_iter()
        .map(|y| {
            if y < 0 || y as usize >= num_classes {
                Err(Error::LabelOutOfRange {
                    field: field.to_string(),
                    label: y,
                    num_classes,
                })
            } else {
                Ok(y as usize)
            }
        })
        .collect()
}

/// Loads a dataset directory and applies `pre`.
pub fn load_dataset(dir: &Path, pre: &Preprocessing) -> Result<SplitDataset> {
    let manifest: DatasetManifest = blob::read_json(&dir.join(MANIFEST_FILE))?;
    let seen_attributes =
        AttributeTable::new(blob::read_matrix(dir, &manifest.seen_attributes, "seen_attributes")?)?;
    let unseen_attributes = AttributeTable::new(blob::read_matrix(
        dir,
        &manifest.unseen_attributes,
        "unseen_attributes",
    )?)?;
    let n_s = seen_attributes.num_classes();
    let n_u = unseen_attributes.num_classes();

    let seen_features =
        FeatureMatrix::new(blob::read_matrix(dir, &manifest.seen_features, "seen_features")?)?;
    let seen_labels = labels(dir, &manifest.seen_labels, "seen_labels", n_s)?;
    let unseen_features =
        FeatureMatrix::new(blob::read_matrix(dir, &manifest.unseen_features, "unseen_features")?)?;
    let unseen_labels_eval = manifest
        .unseen_labels_eval
        .as_ref()
        .map(|b| labels(dir, b, "unseen_labels_eval", n_u))
        .transpose()?;
    let seen_test = match (&manifest.seen_test_features, &manifest.seen_test_labels) {
        (Some(f), Some(l)) => Some(LabeledFeatures {
            features: FeatureMatrix::new(blob::read_matrix(dir, f, "seen_test_features")?)?,
            labels: labels(dir, l, "seen_test_labels", n_s)?,
        }),
        (None, None) => None,
        _ => {
            return Err(Error::Manifest {
                path: dir.join(MANIFEST_FILE),
                message: "seen_test_features and seen_test_labels must appear together".into(),
            })
        }
    };

    let raw = SplitDataset::new(DatasetParts {
        seen_features,
        seen_labels,
        unseen_features,
        seen_attributes,
        unseen_attributes,
        unseen_labels_eval,
        seen_test,
    })?;
    raw.preprocessed(pre)
}

/// Writes `dataset` in the manifest + blob layout, creating `dir` if needed.
pub fn save_dataset(dir: &Path, dataset: &SplitDataset) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = DatasetManifest {
        seen_features: blob::write_matrix(dir, "seen_features.f32", dataset.seen_features().as_array())?,
        seen_labels: blob::write_labels(dir, "seen_labels.i32", dataset.seen_labels())?,
        unseen_features: blob::write_matrix(
            dir,
            "unseen_features.f32",
            dataset.unseen_features().as_array(),
        )?,
        seen_attributes: blob::write_matrix(
            dir,
            "seen_attributes.f32",
            dataset.seen_attributes().as_array(),
        )?,
        unseen_attributes: blob::write_matrix(
            dir,
            "unseen_attributes.f32",
            dataset.unseen_attributes().as_array(),
        )?,
        unseen_labels_eval: dataset
            .unseen_labels_eval()
            .map(|l| blob::write_labels(dir, "unseen_labels_eval.i32", l))
            .transpose()?,
        seen_test_features: dataset
            .seen_test()
            .map(|t| blob::write_matrix(dir, "seen_test_features.f32", t.features.as_array()))
            .transpose()?,
        seen_test_labels: dataset
            .seen_test()
            .map(|t| blob::write_labels(dir, "seen_test_labels.i32", &t.labels))
            .transpose()?,
    };
    blob::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
