//! Single-layer softmax classifier trained with cross-entropy.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{DenseNet, OutputHead};
use crate::optim::{adamw_step, AdamWConfig, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        ClassifierSettings {
            epochs: 25,
            batch_size: 64,
            optimizer: AdamWConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    net: DenseNet,
}

/// Row-wise softmax, numerically stabilized.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    p
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

impl SoftmaxClassifier {
    /// Trains on `(features, labels)` with shuffled minibatches. Returns the
    /// classifier and one warning per class with no training examples.
    pub fn train(
        features: ArrayView2<f64>,
        labels: &[usize],
        num_classes: usize,
        settings: &ClassifierSettings,
        seed: u64,
    ) -> Result<(Self, Vec<String>)> {
        if features.nrows() == 0 {
            return Err(Error::invalid("classifier training set is empty"));
        }
        if features.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if num_classes == 0 || settings.batch_size == 0 {
            return Err(Error::invalid("num_classes and batch_size must be positive"));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {y} out of range for {num_classes} classes")));
        }
        let mut present = vec![false; num_classes];
        labels.iter().for_each(|&y| present[y] = true);
        let warnings = present
            .iter()
            .enumerate()
            .filter(|(_, &p)| !p)
            .map(|(c, _)| format!("class {c} has no training examples and is unreachable"))
            .collect();

        let mut net = DenseNet::init(features.ncols(), &[], num_classes, OutputHead::Linear, seed)?;
        let mut opt = OptimizerState::new(&net);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_C1A5);
        let mut order: Vec<usize> = (0..labels.len()).collect();
        for _ in 0..settings.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(settings.batch_size) {
                let x = features.select(Axis(0), chunk);
                let cache = net.forward_cached(x.view())?;
                let mut d = softmax_rows(&cache.output);
                let b = chunk.len() as f64;
                for (r, &i) in chunk.iter().enumerate() {
                    d[[r, labels[i]]] -= 1.0;
                }
                d.mapv_inplace(|v| v / b);
                let (grads, _) = net.backward(&cache, d.view());
                adamw_step(&mut net, &grads, &mut opt, &settings.optimizer, "classifier")?;
            }
        }
        // Classes never seen in training keep the lowest possible bias so
        // they are never predicted.
        let mut layers = net.layers().to_vec();
        for (c, &p) in present.iter().enumerate() {
            if !p {
                layers[0].weight.row_mut(c).fill(0.0);
                layers[0].bias[c] = f64::MIN;
            }
        }
        let net = DenseNet::from_layers(layers, net.leaky_slope(), OutputHead::Linear)?;
        Ok((SoftmaxClassifier { net }, warnings))
    }

    pub fn num_classes(&self) -> usize {
        self.net.out_dim()
    }

    pub fn in_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.forward(x)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(logits.rows().into_iter().map(argmax).collect())
    }
}
