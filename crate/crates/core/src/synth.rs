//! Class-conditional feature sources used to build labeled training sets.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataspace::{l2_normalize_in_place, AttributeTable, ClassPrior};
use crate::error::{Error, Result};
use crate::nets::{concat_cols, DenseNet};

/// Anything that can draw features for a given class.
pub trait FeatureSampler {
    fn num_classes(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn sample(&self, class: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>>;
}

pub(crate) fn standard_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

/// `G(a_class, z)` with `z ~ N(0, I)`.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorSampler<'a> {
    generator: &'a DenseNet,
    attributes: &'a AttributeTable,
}

impl<'a> GeneratorSampler<'a> {
    pub fn new(generator: &'a DenseNet, attributes: &'a AttributeTable) -> Result<Self> {
        if generator.in_dim() <= attributes.dim() {
            return Err(Error::shape(format!(
                "generator input width {} leaves no room for a latent after {} attribute dims",
                generator.in_dim(),
                attributes.dim()
            )));
        }
        Ok(GeneratorSampler {
            generator,
            attributes,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.in_dim() - self.attributes.dim()
    }
}

impl FeatureSampler for GeneratorSampler<'_> {
    fn num_classes(&self) -> usize {
        self.attributes.num_classes()
    }

    fn feature_dim(&self) -> usize {
        self.generator.out_dim()
    }

    fn sample(&self, class: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let a = self
            .attributes
            .row(class)
            .insert_axis(Axis(0))
            .broadcast((n, self.attributes.dim()))
            .expect("row broadcasts")
            .to_owned();
        let z = standard_normal(rng, n, self.latent_dim());
        self.generator.forward(concat_cols(a.view(), z.view()).view())
    }
}

/// Isotropic Gaussians around fixed class means, optionally projected onto a
/// sphere. Stands in for a perfectly trained generator in tests.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSampler {
    pub means: Array2<f64>,
    pub std: f64,
    pub radius: Option<f64>,
}

impl FeatureSampler for GaussianSampler {
    fn num_classes(&self) -> usize {
        self.means.nrows()
    }

    fn feature_dim(&self) -> usize {
        self.means.ncols()
    }

    fn sample(&self, class: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let mut x = standard_normal(rng, n, self.feature_dim()) * self.std + self.means.row(class);
        if let Some(r) = self.radius {
            for mut row in x.rows_mut() {
                l2_normalize_in_place(row.as_slice_mut().expect("standard layout"), r)?;
            }
        }
        Ok(x)
    }
}

/// Per-class counts proportional to `prior`, totalling about
/// `n_per_class * num_classes`. Every class keeps at least one example.
pub fn counts_from_prior(prior: &ClassPrior, n_per_class: usize) -> Vec<usize> {
    let total = (n_per_class * prior.num_classes()) as f64;
    prior
        .probs()
        .iter()
        .map(|p| ((p * total).round() as usize).max(1))
        .collect()
}

/// Draws `counts[c]` features for every class `c`, class by class.
pub fn synthesize_labeled_set(
    sampler: &dyn FeatureSampler,
    counts: &[usize],
    seed: u64,
) -> Result<(Array2<f64>, Vec<usize>)> {
    if counts.len() != sampler.num_classes() {
        return Err(Error::shape(format!(
            "{} counts for {} classes",
            counts.len(),
            sampler.num_classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = counts.iter().sum();
    let mut out = Array2::zeros((total, sampler.feature_dim()));
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for (class, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let block = sampler.sample(class, n, &mut rng)?;
        out.slice_mut(ndarray::s![row..row + n, ..]).assign(&block);
        labels.extend(std::iter::repeat_n(class, n));
        row += n;
    }
    Ok((out, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::OutputHead;
    use ndarray::array;

    #[test]
    fn generator_set_shape_norm_and_determinism() {
        let g = DenseNet::init(3 + 2, &[8], 4, OutputHead::L2Normalize { radius: 1.0 }, 1).unwrap();
        let attrs = AttributeTable::new(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let s = GeneratorSampler::new(&g, &attrs).unwrap();
        let (x, y) = synthesize_labeled_set(&s, &[5, 5, 5], 7).unwrap();
        assert_eq!(x.dim(), (15, 4));
        assert_eq!(y, [vec![0; 5], vec![1; 5], vec![2; 5]].concat());
        for row in x.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
        assert_eq!(synthesize_labeled_set(&s, &[5, 5, 5], 7).unwrap().0, x);
    }

    #[test]
    fn prior_counts() {
        let p = ClassPrior::new(vec![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(counts_from_prior(&p, 10), vec![15, 9, 6]);
        let p = ClassPrior::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(counts_from_prior(&p, 10), vec![20, 1]);
    }
}
