//! Feature-normalization comparison: a reduced model (G, D, D^u only) is
//! trained once with an L2 generator head on L2-normalized data and once with
//! a sigmoid head on Min-Max data. Reports value histograms of real vs.
//! synthesized unseen features on a shared grid, their 1-D earth-mover
//! distance, and per-epoch unseen accuracy.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::classifier::SoftmaxClassifier;
use crate::config::TrainConfig;
use crate::dataspace::{ClassPrior, Preprocessing, SplitDataset};
use crate::error::{Error, Result};
use crate::eval::per_class_top1;
use crate::losses::{
    seen_critic_grad, seen_generator_adversary_grad, unseen_critic_grad,
    unseen_generator_adversary_grad, CriticSettings, Interpolation, PENALTY_WEIGHT,
};
use crate::nets::{DenseNet, OutputHead};
use crate::optim::{adamw_step, OptimizerState};
use crate::prior::uniform_prior;
use crate::synth::{counts_from_prior, standard_normal, synthesize_labeled_set, GeneratorSampler};

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormVariant {
    L2,
    MinMax,
}

impl NormVariant {
    pub fn name(self) -> &'static str {
        match self {
            NormVariant::L2 => "l2",
            NormVariant::MinMax => "min_max",
        }
    }
}

/// Fixed-grid histogram; `counts` are normalized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<f64>,
}

impl Histogram {
    /// Values outside `[lo, hi]` are clamped into the end bins.
    pub fn new(values: impl Iterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(hi > lo) || bins == 0 {
            return Err(Error::invalid("histogram needs hi > lo and at least one bin"));
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0.0; bins];
        let mut n = 0usize;
        for v in values {
            let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[b] += 1.0;
            n += 1;
        }
        if n == 0 {
            return Err(Error::invalid("histogram of an empty set"));
        }
        counts.iter_mut().for_each(|c| *c /= n as f64);
        let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
        Ok(Histogram { edges, counts })
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }
}

/// Earth-mover distance between two histograms on the same grid: the L1
/// distance of their CDFs times the bin width.
pub fn histogram_emd(p: &Histogram, q: &Histogram) -> Result<f64> {
    if p.edges != q.edges {
        return Err(Error::invalid("histograms are on different grids"));
    }
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut total = 0.0;
    for (a, b) in p.counts.iter().zip(&q.counts) {
        cp += a;
        cq += b;
        total += (cp - cq).abs();
    }
    Ok(total * p.bin_width())
}

/// First epoch (1-based) whose accuracy reaches `fraction` of the final one.
pub fn epochs_to_fraction(curve: &[f64], fraction: f64) -> Option<usize> {
    let last = *curve.last()?;
    curve.iter().position(|&a| a >= fraction * last).map(|i| i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormRun {
    pub variant: NormVariant,
    pub accuracy_per_epoch: Vec<f64>,
    pub real_histogram: Histogram,
    pub synthesized_histogram: Histogram,
    pub emd: f64,
    /// EMD divided by the standard deviation of the real values, so runs
    /// on differently scaled data can be compared.
    pub relative_emd: f64,
    pub epochs_to_90: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormReport {
    pub l2: NormRun,
    pub min_max: NormRun,
    pub config: TrainConfig,
}

impl NormReport {
    /// Histogram CSV: one row per bin with both runs side by side.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from(
            "bin_lo,bin_hi,l2_real,l2_synthesized,min_max_real,min_max_synthesized\n",
        );
        let e = &self.l2.real_histogram.edges;
        for i in 0..e.len() - 1 {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e[i],
                e[i + 1],
                self.l2.real_histogram.counts[i],
                self.l2.synthesized_histogram.counts[i],
                self.min_max.real_histogram.counts[i],
                self.min_max.synthesized_histogram.counts[i],
            ));
        }
        out
    }

    pub fn accuracy_csv(&self) -> String {
        let mut out = String::from("epoch,l2,min_max\n");
        for (i, (a, b)) in self
            .l2
            .accuracy_per_epoch
            .iter()
            .zip(&self.min_max.accuracy_per_epoch)
            .enumerate()
        {
            out.push_str(&format!("{},{a},{b}\n", i + 1));
        }
        out
    }
}

struct Reduced {
    generator: DenseNet,
    critic_seen: DenseNet,
    critic_unseen: DenseNet,
    opt: [OptimizerState; 3],
}

fn unseen_accuracy(generator: &DenseNet, data: &SplitDataset, cfg: &TrainConfig, seed: u64) -> Result<f64> {
    let labels = data
        .unseen_labels_eval()
        .ok_or_else(|| Error::MissingEvalData("unseen evaluation labels".into()))?;
    let n_u = data.num_unseen_classes();
    let sampler = GeneratorSampler::new(generator, data.unseen_attributes())?;
    let (x, y) = synthesize_labeled_set(&sampler, &vec![cfg.synth_per_class_eval; n_u], seed)?;
    let (clf, _) = SoftmaxClassifier::train(x.view(), &y, n_u, &cfg.classifier_settings(), seed ^ 1)?;
    let preds = clf.predict(data.unseen_features().view())?;
    Ok(per_class_top1(&preds, labels, n_u)?.mean)
}

fn sample_labels(rng: &mut ChaCha8Rng, prior: &ClassPrior, n: usize) -> Vec<usize> {
    let probs = prior.probs();
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (c, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return c;
                }
            }
            probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
        })
        .collect()
}

fn run_variant(raw: &SplitDataset, cfg: &TrainConfig, variant: NormVariant) -> Result<NormRun> {
    let r = cfg.radius;
    let (pre, head, interpolation) = match variant {
        NormVariant::L2 => (
            Preprocessing::l2(r),
            OutputHead::L2Normalize { radius: r },
            Interpolation::Hypersphere { radius: r },
        ),
        NormVariant::MinMax => (Preprocessing::min_max(r), OutputHead::Sigmoid, Interpolation::Linear),
    };
    let data = raw.preprocessed(&pre)?;
    let d_v = data.feature_dim();
    let d_a = data.attribute_dim();
    let k = cfg.latent_dim.unwrap_or(d_a);
    let h = cfg.hidden_width;
    // Same seeds for both variants so they differ only by normalization.
    let s = cfg.seed;
    let generator = DenseNet::init(d_a + k, &[h], d_v, head, s ^ 0x11)?;
    let critic_seen = DenseNet::init(d_v + d_a, &[h], 1, OutputHead::Linear, s ^ 0x22)?;
    let critic_unseen = DenseNet::init(d_v, &[h], 1, OutputHead::Linear, s ^ 0x33)?;
    let mut m = Reduced {
        opt: [
            OptimizerState::new(&generator),
            OptimizerState::new(&critic_seen),
            OptimizerState::new(&critic_unseen),
        ],
        generator,
        critic_seen,
        critic_unseen,
    };
    let settings = CriticSettings {
        penalty_weight: PENALTY_WEIGHT,
        interpolation,
    };
    let prior = match data.true_unseen_prior() {
        Some(p) => p,
        None => uniform_prior(data.num_unseen_classes())?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    let seen = data.seen_features().view();
    let unseen = data.unseen_features().view();
    let b = cfg.batch_size;
    let epochs = cfg.epochs_transductive.max(1);
    let mut curve = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        for _ in 0..seen.nrows().div_ceil(b) {
            for _ in 0..cfg.critic_steps {
                let idx = rand::seq::index::sample(&mut rng, seen.nrows(), b.min(seen.nrows())).into_vec();
                let n = idx.len();
                let v = seen.select(Axis(0), &idx);
                let y: Vec<usize> = idx.iter().map(|&i| data.seen_labels()[i]).collect();
                let a = data.seen_attributes().lookup(&y);
                let z = standard_normal(&mut rng, n, k);
                let t = Array1::from_shape_simple_fn(n, || rng.random::<f64>());
                let (_, g) = seen_critic_grad(&m.critic_seen, &m.generator, v.view(), a.view(), z.view(), &t, &settings)?;
                adamw_step(&mut m.critic_seen, &g, &mut m.opt[1], &cfg.optimizer, "critic_seen")?;

                let idx = rand::seq::index::sample(&mut rng, unseen.nrows(), b.min(unseen.nrows())).into_vec();
                let n = idx.len();
                let vu = unseen.select(Axis(0), &idx);
                let au = data.unseen_attributes().lookup(&sample_labels(&mut rng, &prior, n));
                let z = standard_normal(&mut rng, n, k);
                let t = Array1::from_shape_simple_fn(n, || rng.random::<f64>());
                let (_, g) = unseen_critic_grad(&m.critic_unseen, &m.generator, vu.view(), au.view(), z.view(), &t, &settings)?;
                adamw_step(&mut m.critic_unseen, &g, &mut m.opt[2], &cfg.optimizer, "critic_unseen")?;
            }
            let ys: Vec<usize> = (0..b).map(|_| rng.random_range(0..data.num_seen_classes())).collect();
            let a = data.seen_attributes().lookup(&ys);
            let z = standard_normal(&mut rng, b, k);
            let (_, g_s) = seen_generator_adversary_grad(&m.critic_seen, &m.generator, a.view(), z.view())?;
            let au = data.unseen_attributes().lookup(&sample_labels(&mut rng, &prior, b));
            let z = standard_normal(&mut rng, b, k);
            let (_, g_u) = unseen_generator_adversary_grad(&m.critic_unseen, &m.generator, au.view(), z.view())?;
            let mut g = g_s;
            g.scale(-cfg.alpha);
            g.add_scaled(&g_u, -cfg.gamma);
            adamw_step(&mut m.generator, &g, &mut m.opt[0], &cfg.optimizer, "generator")?;
        }
        curve.push(unseen_accuracy(&m.generator, &data, cfg, s ^ 0xACC0 ^ epoch as u64)?);
    }

    // Synthesize as many unseen rows as there are real ones, in prior proportion.
    let n_u = data.num_unseen_classes();
    let per_class = unseen.nrows().div_ceil(n_u);
    let counts = counts_from_prior(&prior, per_class);
    let sampler = GeneratorSampler::new(&m.generator, data.unseen_attributes())?;
    let (fake, _): (Array2<f64>, _) = synthesize_labeled_set(&sampler, &counts, s ^ 0x5EED)?;
    let (lo, hi) = (-r.max(1.0), r.max(1.0));
    let real_hist = Histogram::new(unseen.iter().copied(), lo, hi, HISTOGRAM_BINS)?;
    let fake_hist = Histogram::new(fake.iter().copied(), lo, hi, HISTOGRAM_BINS)?;
    let emd = histogram_emd(&real_hist, &fake_hist)?;
    let n = unseen.len() as f64;
    let mean = unseen.iter().sum::<f64>() / n;
    let std = (unseen.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(NormRun {
        variant,
        epochs_to_90: epochs_to_fraction(&curve, 0.9),
        accuracy_per_epoch: curve,
        real_histogram: real_hist,
        synthesized_histogram: fake_hist,
        emd,
        relative_emd: if std > 0.0 { emd / std } else { f64::INFINITY },
    })
}

/// Runs both variants on `raw` (unnormalized) data. Epoch count is
/// `cfg.epochs_transductive`.
pub fn norm_experiment(raw: &SplitDataset, cfg: &TrainConfig) -> Result<NormReport> {
    cfg.validate()?;
    Ok(NormReport {
        l2: run_variant(raw, cfg, NormVariant::L2)?,
        min_max: run_variant(raw, cfg, NormVariant::MinMax)?,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn emd_of_shifted_point_mass_is_shift() {
        let p = Histogram::new([0.05].into_iter(), 0.0, 1.0, 10).unwrap();
        let q = Histogram::new([0.35].into_iter(), 0.0, 1.0, 10).unwrap();
        assert!((histogram_emd(&p, &q).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(histogram_emd(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn grids_must_match() {
        let p = Histogram::new([0.1].into_iter(), 0.0, 1.0, 10).unwrap();
        let q = Histogram::new([0.1].into_iter(), 0.0, 2.0, 10).unwrap();
        assert!(histogram_emd(&p, &q).is_err());
    }

    #[test]
    fn out_of_range_values_clamp_to_end_bins() {
        let h = Histogram::new([-5.0, 5.0, 1.0].into_iter(), -1.0, 1.0, 4).unwrap();
        assert_eq!(h.counts, vec![1.0 / 3.0, 0.0, 0.0, 2.0 / 3.0]);
        assert_eq!(h.edges.len(), 5);
    }

    #[test]
    fn epochs_to_ninety_percent() {
        assert_eq!(epochs_to_fraction(&[0.1, 0.5, 0.95, 1.0], 0.9), Some(3));
        assert_eq!(epochs_to_fraction(&[1.0], 0.9), Some(1));
        assert_eq!(epochs_to_fraction(&[], 0.9), None);
    }

    proptest! {
        #[test]
        fn emd_symmetric_and_bounded(
            a in proptest::collection::vec(-1.0f64..1.0, 1..50),
            b in proptest::collection::vec(-1.0f64..1.0, 1..50),
        ) {
            let p = Histogram::new(a.into_iter(), -1.0, 1.0, HISTOGRAM_BINS).unwrap();
            let q = Histogram::new(b.into_iter(), -1.0, 1.0, HISTOGRAM_BINS).unwrap();
            let d = histogram_emd(&p, &q).unwrap();
            prop_assert!((d - histogram_emd(&q, &p).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=2.0 + 1e-12).contains(&d));
            prop_assert!((p.counts.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
