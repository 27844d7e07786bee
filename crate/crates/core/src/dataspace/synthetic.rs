//! Seeded synthetic stand-in for pre-extracted feature datasets.
//!
//! Class means sit on a sphere of radius `separation` inside a random
//! subspace; features are isotropic Gaussians around them. Class attributes
//! are a fixed random linear image of the (unit-scaled) means plus Gaussian
//! noise, so they describe classes informatively but imperfectly.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    l2_normalize_in_place, AttributeTable, DatasetParts, FeatureMatrix, LabeledFeatures,
    SplitDataset,
};
use crate::error::{Error, Result};

/// Either one count shared by every class or an explicit per-class list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassCounts {
    Each(usize),
    PerClass(Vec<usize>),
}

impl ClassCounts {
    fn expand(&self, classes: usize, what: &str) -> Result<Vec<usize>> {
        let counts = match self {
            ClassCounts::Each(n) => vec![*n; classes],
            ClassCounts::PerClass(v) => {
                if v.len() != classes {
                    return Err(Error::invalid(format!(
                        "{what}: {} counts given for {classes} classes",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        if counts.contains(&0) {
            return Err(Error::invalid(format!("{what}: every class needs at least one example")));
        }
        Ok(counts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_seen: usize,
    pub num_unseen: usize,
    pub feature_dim: usize,
    pub attribute_dim: usize,
    pub seen_per_class: ClassCounts,
    pub unseen_per_class: ClassCounts,
    /// Radius of the sphere holding the class means.
    pub separation: f64,
    /// Per-dimension standard deviation of features around their class mean.
    pub noise: f64,
    /// Standard deviation of the noise added to projected attributes.
    #[serde(default = "default_attribute_noise")]
    pub attribute_noise: f64,
    /// Dimension of the subspace spanned by class means; `None` uses the full
    /// feature space.
    #[serde(default)]
    pub latent_rank: Option<usize>,
    /// Held-out seen test examples per class, as a fraction of that class's
    /// training count. These are generated in addition to the training rows.
    #[serde(default = "default_seen_test_fraction")]
    pub seen_test_fraction: f64,
}

fn default_attribute_noise() -> f64 {
    0.1
}

fn default_seen_test_fraction() -> f64 {
    0.2
}

impl SyntheticSpec {
    /// The committed desk-scale fixture: 8 seen and 4 unseen classes with an
    /// unbalanced unseen prior.
    pub fn fixture() -> Self {
        SyntheticSpec {
            num_seen: 8,
            num_unseen: 4,
            feature_dim: 32,
            attribute_dim: 16,
            seen_per_class: ClassCounts::Each(100),
            unseen_per_class: ClassCounts::PerClass(vec![160, 80, 40, 20]),
            separation: 5.0,
            noise: 0.5,
            attribute_noise: 0.25,
            latent_rank: Some(6),
            seen_test_fraction: default_seen_test_fraction(),
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_seen", self.num_seen),
            ("num_unseen", self.num_unseen),
            ("feature_dim", self.feature_dim),
            ("attribute_dim", self.attribute_dim),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.separation > 0.0) || !(self.noise >= 0.0) || !(self.attribute_noise >= 0.0) {
            return Err(Error::invalid(
                "separation must be positive and noise scales non-negative",
            ));
        }
        if let Some(0) = self.latent_rank {
            return Err(Error::invalid("latent_rank must be positive"));
        }
        if !(0.0..=1.0).contains(&self.seen_test_fraction) {
            return Err(Error::invalid("seen_test_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || std * rng.sample::<f64, _>(StandardNormal))
}

fn sample_rows(
    rng: &mut ChaCha8Rng,
    means: &Array2<f64>,
    classes: std::ops::Range<usize>,
    counts: &[usize],
    noise: f64,
) -> (Array2<f64>, Vec<usize>) {
    let dim = means.ncols();
    let total: usize = counts.iter().sum();
    let mut rows = Array2::zeros((total, dim));
    let mut labels = Vec::with_capacity(total);
    let mut r = 0;
    for (local, (class, &n)) in classes.zip(counts).enumerate() {
        for _ in 0..n {
            for j in 0..dim {
                rows[[r, j]] = means[[class, j]] + noise * rng.sample::<f64, _>(StandardNormal);
            }
            labels.push(local);
            r += 1;
        }
    }
    // Shuffle so row order carries no class information.
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);
    let rows = rows.select(ndarray::Axis(0), &order);
    let labels = order.iter().map(|&i| labels[i]).collect();
    (rows, labels)
}

fn draw_means(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let rank = spec.latent_rank.unwrap_or(spec.feature_dim);
    let basis = gaussian_matrix(rng, spec.feature_dim, rank, 1.0);
    let codes = gaussian_matrix(rng, spec.num_seen + spec.num_unseen, rank, 1.0);
    let mut means = codes.dot(&basis.t());
    for mut row in means.rows_mut() {
        l2_normalize_in_place(row.as_slice_mut().expect("standard layout"), spec.separation)?;
    }
    Ok(means)
}

/// Class means behind `make_synthetic_tzsl(spec, seed)`: seen classes
/// first, then unseen. Features are these plus isotropic `noise`.
pub fn synthetic_class_means(spec: &SyntheticSpec, seed: u64) -> Result<Array2<f64>> {
    spec.validate()?;
    draw_means(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Generates a seeded synthetic transductive split with evaluation labels.
pub fn make_synthetic_tzsl(spec: &SyntheticSpec, seed: u64) -> Result<SplitDataset> {
    spec.validate()?;
    let seen_counts = spec.seen_per_class.expand(spec.num_seen, "seen_per_class")?;
    let unseen_counts = spec.unseen_per_class.expand(spec.num_unseen, "unseen_per_class")?;
    let n_classes = spec.num_seen + spec.num_unseen;
    let d_v = spec.feature_dim;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = draw_means(spec, &mut rng)?;

    let projection = gaussian_matrix(&mut rng, spec.attribute_dim, d_v, 1.0 / (d_v as f64).sqrt());
    let mut attributes = Array2::zeros((n_classes, spec.attribute_dim));
    for c in 0..n_classes {
        let unit_mean = means.row(c).mapv(|x| x / spec.separation);
        let mut a: Array1<f64> = projection.dot(&unit_mean);
        a.mapv_inplace(|x| x + spec.attribute_noise * rng.sample::<f64, _>(StandardNormal));
        l2_normalize_in_place(a.as_slice_mut().expect("contiguous"), 1.0)?;
        attributes.row_mut(c).assign(&a);
    }

    let (seen_x, seen_y) = sample_rows(&mut rng, &means, 0..spec.num_seen, &seen_counts, spec.noise);
    let (unseen_x, unseen_y) =
        sample_rows(&mut rng, &means, spec.num_seen..n_classes, &unseen_counts, spec.noise);
    let test_counts: Vec<usize> = seen_counts
        .iter()
        .map(|&c| (c as f64 * spec.seen_test_fraction).round() as usize)
        .collect();
    let seen_test = if test_counts.iter().all(|&c| c > 0) {
        let (x, y) = sample_rows(&mut rng, &means, 0..spec.num_seen, &test_counts, spec.noise);
        Some(LabeledFeatures {
            features: FeatureMatrix::new(x)?,
            labels: y,
        })
    } else {
        None
    };

    SplitDataset::new(DatasetParts {
        seen_features: FeatureMatrix::new(seen_x)?,
        seen_labels: seen_y,
        unseen_features: FeatureMatrix::new(unseen_x)?,
        seen_attributes: AttributeTable::new(
            attributes.slice(ndarray::s![..spec.num_seen, ..]).to_owned(),
        )?,
        unseen_attributes: AttributeTable::new(
            attributes.slice(ndarray::s![spec.num_seen.., ..]).to_owned(),
        )?,
        unseen_labels_eval: Some(unseen_y),
        seen_test,
    })
}
