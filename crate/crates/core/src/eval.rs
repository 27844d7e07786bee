//! Final classifier construction and metrics.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::classifier::SoftmaxClassifier;
use crate::config::{EvalPrior, FeatureSpace, PriorMode, TrainConfig};
use crate::dataspace::{ClassPrior, SplitDataset};
use crate::error::{Error, Result};
use crate::nets::{DenseNet, ModelSet};
use crate::prior::{prior_tv_distance, uniform_prior};
use crate::synth::{counts_from_prior, GeneratorSampler};

pub use crate::synth::synthesize_labeled_set;

const EVAL_SEED_SALT: u64 = 0xE7A1_0000_0000_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMethod {
    /// 1-NN between `R(v)` and the class attributes.
    NearestAttribute,
    Classifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Tzsl,
    Gtzsl,
}

/// Per-class accuracies (`None` for classes absent from the labels) and
/// their unweighted mean over present classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassAccuracy {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

pub fn per_class_top1(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<PerClassAccuracy> {
    if labels.is_empty() {
        return Err(Error::invalid("no labels to score"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= num_classes {
            return Err(Error::invalid(format!("label {y} out of range for {num_classes} classes")));
        }
        totals[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok(PerClassAccuracy { per_class, mean })
}

/// `2 s u / (s + u)`, and 0 when both are 0.
pub fn harmonic_mean(acc_s: f64, acc_u: f64) -> f64 {
    if acc_s + acc_u == 0.0 {
        0.0
    } else {
        2.0 * acc_s * acc_u / (acc_s + acc_u)
    }
}

/// `[v, h, R(v)]` with `h` the regressor's first hidden layer.
pub fn augment(v: ArrayView2<f64>, regressor: &DenseNet, post_activation: bool) -> Result<Array2<f64>> {
    let (h, a) = regressor.forward_hidden(v, post_activation)?;
    Ok(concatenate(Axis(1), &[v, h.view(), a.view()]).expect("row counts match"))
}

/// Features of `v` in the requested space.
pub fn project(
    v: ArrayView2<f64>,
    regressor: &DenseNet,
    space: FeatureSpace,
    post_activation: bool,
) -> Result<Array2<f64>> {
    match space {
        FeatureSpace::Visual => Ok(v.to_owned()),
        FeatureSpace::Attribute => regressor.forward(v),
        FeatureSpace::Hidden => Ok(regressor.forward_hidden(v, post_activation)?.0),
        FeatureSpace::Concatenated => augment(v, regressor, post_activation),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub inference_space: FeatureSpace,
    pub method: InferenceMethod,
    pub acc_unseen: f64,
    pub per_class_unseen: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_seen: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class_seen: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub harmonic_mean: Option<f64>,
    pub prior_mode: PriorMode,
    pub prior: Vec<f64>,
    pub prior_tv: Option<f64>,
    pub seed: u64,
    pub warnings: Vec<String>,
    pub config: TrainConfig,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "mode,inference_space,method,prior_mode,seed,acc_unseen,acc_seen,harmonic_mean,prior_tv";

    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| format!("{v}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            variant_name(&self.mode),
            variant_name(&self.inference_space),
            variant_name(&self.method),
            variant_name(&self.prior_mode),
            self.seed,
            self.acc_unseen,
            opt(self.acc_seen),
            opt(self.harmonic_mean),
            opt(self.prior_tv),
        )
    }
}

/// snake_case serde name of a unit enum variant.
fn variant_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

/// A frozen view of the trained model and the prior it ended with.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub models: &'a ModelSet,
    pub prior: &'a ClassPrior,
}

fn eval_seed(cfg: &TrainConfig) -> u64 {
    cfg.seed ^ EVAL_SEED_SALT
}

fn synthesis_prior(snap: &Snapshot, cfg: &TrainConfig) -> Result<ClassPrior> {
    match cfg.eval_prior {
        EvalPrior::Current => Ok(snap.prior.clone()),
        EvalPrior::Uniform => uniform_prior(snap.prior.num_classes()),
    }
}

fn nearest_attribute(pseudo: &Array2<f64>, attributes: ArrayView2<f64>) -> Vec<usize> {
    pseudo
        .rows()
        .into_iter()
        .map(|p| {
            attributes
                .rows()
                .into_iter()
                .map(|a| (&a - &p).mapv(|x| x * x).sum())
                .enumerate()
                .fold((0, f64::INFINITY), |b, (i, d)| if d < b.1 { (i, d) } else { b })
                .0
        })
        .collect()
}

fn check_dims(snap: &Snapshot, dataset: &SplitDataset) -> Result<()> {
    if snap.models.feature_dim() != dataset.feature_dim()
        || snap.models.attribute_dim() != dataset.attribute_dim()
    {
        return Err(Error::shape(format!(
            "model expects d_v={}, d_a={} but dataset has d_v={}, d_a={}",
            snap.models.feature_dim(),
            snap.models.attribute_dim(),
            dataset.feature_dim(),
            dataset.attribute_dim()
        )));
    }
    if snap.prior.num_classes() != dataset.num_unseen_classes() {
        return Err(Error::shape(format!(
            "prior over {} classes for {} unseen classes",
            snap.prior.num_classes(),
            dataset.num_unseen_classes()
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn report(
    snap: &Snapshot,
    dataset: &SplitDataset,
    cfg: &TrainConfig,
    mode: EvalMode,
    space: FeatureSpace,
    method: InferenceMethod,
    unseen: PerClassAccuracy,
    warnings: Vec<String>,
) -> EvalReport {
    let prior_tv = dataset
        .true_unseen_prior()
        .and_then(|t| prior_tv_distance(snap.prior, &t).ok());
    EvalReport {
        mode,
        inference_space: space,
        method,
        acc_unseen: unseen.mean,
        per_class_unseen: unseen.per_class,
        acc_seen: None,
        per_class_seen: None,
        harmonic_mean: None,
        prior_mode: cfg.prior_mode,
        prior: snap.prior.probs().to_vec(),
        prior_tv,
        seed: cfg.seed,
        warnings,
        config: cfg.clone(),
    }
}

/// Transductive evaluation on unseen classes in the requested space.
pub fn infer_in_space(
    snap: &Snapshot,
    dataset: &SplitDataset,
    cfg: &TrainConfig,
    space: FeatureSpace,
    method: InferenceMethod,
) -> Result<EvalReport> {
    check_dims(snap, dataset)?;
    let labels = dataset
        .unseen_labels_eval()
        .ok_or_else(|| Error::MissingEvalData("unseen evaluation labels".into()))?;
    let n_u = dataset.num_unseen_classes();
    let r = &snap.models.regressor;
    let real = dataset.unseen_features().view();
    let mut warnings = Vec::new();
    let predictions = match method {
        InferenceMethod::NearestAttribute => {
            if space != FeatureSpace::Attribute {
                return Err(Error::invalid(
                    "nearest-attribute inference only works in the attribute space",
                ));
            }
            nearest_attribute(&r.forward(real)?, dataset.unseen_attributes().as_array().view())
        }
        InferenceMethod::Classifier => {
            let prior = synthesis_prior(snap, cfg)?;
            let counts = counts_from_prior(&prior, cfg.synth_per_class_eval);
            let sampler = GeneratorSampler::new(&snap.models.generator, dataset.unseen_attributes())?;
            let seed = eval_seed(cfg);
            let (fake, y) = synthesize_labeled_set(&sampler, &counts, seed)?;
            let post = cfg.hidden_post_activation;
            let train_x = project(fake.view(), r, space, post)?;
            let (clf, w) = SoftmaxClassifier::train(
                train_x.view(),
                &y,
                n_u,
                &cfg.classifier_settings(),
                seed ^ 1,
            )?;
            warnings.extend(w);
            clf.predict(project(real, r, space, post)?.view())?
        }
    };
    let acc = per_class_top1(&predictions, labels, n_u)?;
    Ok(report(snap, dataset, cfg, EvalMode::Tzsl, space, method, acc, warnings))
}

/// Unseen-class accuracy with the configured space and a trained classifier.
pub fn tzsl_evaluate(snap: &Snapshot, dataset: &SplitDataset, cfg: &TrainConfig) -> Result<EvalReport> {
    infer_in_space(snap, dataset, cfg, cfg.inference_space, InferenceMethod::Classifier)
}

/// Which parts of the generalized-mode training set to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GzslOptions {
    pub mix_real_seen: bool,
    pub synthesize_unseen: bool,
}

/// Generalized evaluation over seen and unseen classes jointly, using the
/// configured options.
pub fn gtzsl_evaluate(snap: &Snapshot, dataset: &SplitDataset, cfg: &TrainConfig) -> Result<EvalReport> {
    gtzsl_evaluate_with(
        snap,
        dataset,
        cfg,
        GzslOptions {
            mix_real_seen: cfg.gzsl_mix_real_seen,
            synthesize_unseen: true,
        },
    )
}

pub fn gtzsl_evaluate_with(
    snap: &Snapshot,
    dataset: &SplitDataset,
    cfg: &TrainConfig,
    opts: GzslOptions,
) -> Result<EvalReport> {
    check_dims(snap, dataset)?;
    let seen_test = dataset
        .seen_test()
        .ok_or_else(|| Error::MissingEvalData("held-out seen test split".into()))?;
    let unseen_labels = dataset
        .unseen_labels_eval()
        .ok_or_else(|| Error::MissingEvalData("unseen evaluation labels".into()))?;
    let n_s = dataset.num_seen_classes();
    let n_u = dataset.num_unseen_classes();
    let r = &snap.models.regressor;
    let g = &snap.models.generator;
    let space = cfg.inference_space;
    let post = cfg.hidden_post_activation;
    let seed = eval_seed(cfg);

    let seen_sampler = GeneratorSampler::new(g, dataset.seen_attributes())?;
    let (mut x, mut y) =
        synthesize_labeled_set(&seen_sampler, &vec![cfg.synth_per_class_eval; n_s], seed)?;
    if opts.synthesize_unseen {
        let prior = synthesis_prior(snap, cfg)?;
        let unseen_sampler = GeneratorSampler::new(g, dataset.unseen_attributes())?;
        let (xu, yu) = synthesize_labeled_set(
            &unseen_sampler,
            &counts_from_prior(&prior, cfg.synth_per_class_eval),
            seed.wrapping_add(1),
        )?;
        x = concatenate![Axis(0), x, xu];
        y.extend(yu.iter().map(|c| c + n_s));
    }
    if opts.mix_real_seen {
        x = concatenate![Axis(0), x, dataset.seen_features().as_array().view()];
        y.extend_from_slice(dataset.seen_labels());
    }
    let (clf, warnings) = SoftmaxClassifier::train(
        project(x.view(), r, space, post)?.view(),
        &y,
        n_s + n_u,
        &cfg.classifier_settings(),
        seed ^ 1,
    )?;

    let pred_s = clf.predict(project(seen_test.features.view(), r, space, post)?.view())?;
    let acc_s = per_class_top1(&pred_s, &seen_test.labels, n_s + n_u)?;
    let pred_u = clf.predict(project(dataset.unseen_features().view(), r, space, post)?.view())?;
    let shifted: Vec<usize> = unseen_labels.iter().map(|c| c + n_s).collect();
    let acc_u_all = per_class_top1(&pred_u, &shifted, n_s + n_u)?;
    let acc_u = PerClassAccuracy {
        per_class: acc_u_all.per_class[n_s..].to_vec(),
        mean: acc_u_all.mean,
    };

    let mut rep = report(snap, dataset, cfg, EvalMode::Gtzsl, space, InferenceMethod::Classifier, acc_u, warnings);
    rep.acc_seen = Some(acc_s.mean);
    rep.per_class_seen = Some(acc_s.per_class[..n_s].to_vec());
    rep.harmonic_mean = Some(harmonic_mean(acc_s.mean, rep.acc_unseen));
    Ok(rep)
}

/// One classifier-mode report per feature space.
pub fn space_sweep(snap: &Snapshot, dataset: &SplitDataset, cfg: &TrainConfig) -> Result<Vec<EvalReport>> {
    FeatureSpace::ALL
        .iter()
        .map(|&s| infer_in_space(snap, dataset, cfg, s, InferenceMethod::Classifier))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataspace::{make_synthetic_tzsl, ClassCounts, SyntheticSpec};
    use crate::nets::{Architecture, Layer, OutputHead};
    use ndarray::Array1;
    use proptest::prelude::*;

    #[test]
    fn per_class_examples() {
        let a = per_class_top1(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
        assert_eq!(a.per_class, vec![Some(0.5), Some(1.0)]);
        assert_eq!(a.mean, 0.75);
        assert_eq!(per_class_top1(&[2, 1], &[2, 1], 3).unwrap().mean, 1.0);
        let mut labels = vec![0; 99];
        labels.push(1);
        assert_eq!(per_class_top1(&[0; 100], &labels, 2).unwrap().mean, 0.5);
        assert!(per_class_top1(&[], &[], 2).is_err());
        assert!(per_class_top1(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn harmonic_examples() {
        assert_eq!(harmonic_mean(1.0, 1.0), 1.0);
        assert!((harmonic_mean(0.8, 0.6) - 0.6857).abs() < 5e-5);
        assert_eq!(harmonic_mean(0.7, 0.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
    }

    proptest! {
        #[test]
        fn harmonic_mean_between_min_and_mean(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let h = harmonic_mean(a, b);
            prop_assert!(h >= a.min(b) - 1e-15);
            prop_assert!(h <= (a + b) / 2.0 + 1e-15);
            if a == b { prop_assert!((h - a).abs() < 1e-15); }
        }

        #[test]
        fn duplication_invariance(
            labels in proptest::collection::vec(0usize..4, 1..40),
            preds in proptest::collection::vec(0usize..4, 40),
        ) {
            let preds = &preds[..labels.len()];
            let once = per_class_top1(preds, &labels, 4).unwrap();
            let l2 = [labels.clone(), labels.clone()].concat();
            let p2 = [preds.to_vec(), preds.to_vec()].concat();
            prop_assert_eq!(once, per_class_top1(&p2, &l2, 4).unwrap());
        }
    }

    #[test]
    fn augment_layout() {
        let r = DenseNet::init(16, &[32], 8, OutputHead::L2Normalize { radius: 1.0 }, 3).unwrap();
        let v = Array2::from_shape_fn((5, 16), |(i, j)| (i + j) as f64 * 0.1 - 0.3);
        let x = augment(v.view(), &r, true).unwrap();
        assert_eq!(x.ncols(), 56);
        assert_eq!(x.slice(ndarray::s![.., ..16]), v);
        for row in x.slice(ndarray::s![.., 48..]).rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    fn small_dataset() -> SplitDataset {
        make_synthetic_tzsl(
            &SyntheticSpec {
                num_seen: 3,
                num_unseen: 2,
                feature_dim: 6,
                attribute_dim: 4,
                seen_per_class: ClassCounts::Each(10),
                unseen_per_class: ClassCounts::PerClass(vec![12, 6]),
                separation: 5.0,
                noise: 0.5,
                attribute_noise: 0.1,
                latent_rank: None,
                seen_test_fraction: 0.2,
            },
            1,
        )
        .unwrap()
        .preprocessed(&Default::default())
        .unwrap()
    }

    fn small_models(ds: &SplitDataset) -> ModelSet {
        ModelSet::init(
            &Architecture {
                feature_dim: ds.feature_dim(),
                attribute_dim: ds.attribute_dim(),
                latent_dim: ds.attribute_dim(),
                hidden_width: 8,
                radius: 1.0,
            },
            2,
        )
        .unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            synth_per_class_eval: 20,
            ..TrainConfig::fixture()
        }
    }

    #[test]
    fn nearest_attribute_with_oracle_regressor_is_perfect() {
        let ds = small_dataset();
        let mut models = small_models(&ds);
        // Features are the class attributes themselves and R is the identity,
        // so R(v) reproduces the attribute exactly.
        let labels = ds.unseen_labels_eval().unwrap().to_vec();
        let feats = ds.unseen_attributes().lookup(&labels);
        let mut parts = ds.clone().into_parts();
        let d_a = ds.attribute_dim();
        parts.unseen_features = crate::dataspace::FeatureMatrix::new(feats).unwrap();
        parts.seen_features =
            crate::dataspace::FeatureMatrix::new(ds.seen_attributes().lookup(&parts.seen_labels)).unwrap();
        parts.seen_test = None;
        let oracle_ds = SplitDataset::new(parts).unwrap();
        let identity = Layer {
            weight: Array2::eye(d_a),
            bias: Array1::zeros(d_a),
        };
        models.regressor = DenseNet::from_layers(
            vec![identity.clone(), identity],
            1.0,
            OutputHead::L2Normalize { radius: 1.0 },
        )
        .unwrap();
        models.generator = DenseNet::init(d_a + 4, &[8], d_a, OutputHead::L2Normalize { radius: 1.0 }, 1).unwrap();
        let prior = ClassPrior::uniform(2).unwrap();
        let snap = Snapshot {
            models: &models,
            prior: &prior,
        };
        let rep = infer_in_space(
            &snap,
            &oracle_ds,
            &small_cfg(),
            FeatureSpace::Attribute,
            InferenceMethod::NearestAttribute,
        )
        .unwrap();
        assert_eq!(rep.acc_unseen, 1.0);
        assert!(infer_in_space(
            &snap,
            &oracle_ds,
            &small_cfg(),
            FeatureSpace::Visual,
            InferenceMethod::NearestAttribute
        )
        .is_err());
    }

    #[test]
    fn reports_are_consistent_and_deterministic() {
        let ds = small_dataset();
        let models = small_models(&ds);
        let prior = ds.true_unseen_prior().unwrap();
        let snap = Snapshot {
            models: &models,
            prior: &prior,
        };
        let cfg = small_cfg();
        let a = tzsl_evaluate(&snap, &ds, &cfg).unwrap();
        assert_eq!(a, tzsl_evaluate(&snap, &ds, &cfg).unwrap());
        assert_eq!(a.seed, cfg.seed);
        assert_eq!(a.prior_mode, cfg.prior_mode);
        assert_eq!(a.prior_tv, Some(0.0));
        let concat = infer_in_space(&snap, &ds, &cfg, FeatureSpace::Concatenated, InferenceMethod::Classifier)
            .unwrap();
        assert_eq!(concat, a);
        let visual =
            infer_in_space(&snap, &ds, &cfg, FeatureSpace::Visual, InferenceMethod::Classifier).unwrap();
        assert!((0.0..=1.0).contains(&visual.acc_unseen));

        let g = gtzsl_evaluate(&snap, &ds, &cfg).unwrap();
        assert_eq!(
            g.harmonic_mean.unwrap(),
            harmonic_mean(g.acc_seen.unwrap(), g.acc_unseen)
        );
        assert_eq!(g.per_class_seen.as_ref().unwrap().len(), 3);
        assert_eq!(g.per_class_unseen.len(), 2);
        assert!(EvalReport::CSV_HEADER.split(',').count() == g.csv_row().split(',').count());
    }

    #[test]
    fn seen_only_classifier_scores_zero_on_unseen() {
        let ds = small_dataset();
        let models = small_models(&ds);
        let prior = ds.true_unseen_prior().unwrap();
        let snap = Snapshot {
            models: &models,
            prior: &prior,
        };
        let rep = gtzsl_evaluate_with(
            &snap,
            &ds,
            &small_cfg(),
            GzslOptions {
                mix_real_seen: true,
                synthesize_unseen: false,
            },
        )
        .unwrap();
        assert_eq!(rep.acc_unseen, 0.0);
        assert_eq!(rep.harmonic_mean, Some(0.0));
        assert_eq!(rep.warnings.len(), 2);
    }

    #[test]
    fn missing_eval_data() {
        let ds = small_dataset();
        let mut parts = ds.clone().into_parts();
        parts.seen_test = None;
        parts.unseen_labels_eval = None;
        let bare = SplitDataset::new(parts).unwrap();
        let models = small_models(&ds);
        let prior = ClassPrior::uniform(2).unwrap();
        let snap = Snapshot {
            models: &models,
            prior: &prior,
        };
        assert!(matches!(tzsl_evaluate(&snap, &bare, &small_cfg()), Err(Error::MissingEvalData(_))));
        assert!(matches!(gtzsl_evaluate(&snap, &bare, &small_cfg()), Err(Error::MissingEvalData(_))));
    }

    #[test]
    fn synthesized_set_shape() {
        let g = DenseNet::init(4 + 4, &[8], 6, OutputHead::L2Normalize { radius: 1.0 }, 1).unwrap();
        let ds = small_dataset();
        let s = GeneratorSampler::new(&g, ds.unseen_attributes()).unwrap();
        let (x, y) = synthesize_labeled_set(&s, &[5, 5], 3).unwrap();
        assert_eq!(x.nrows(), 10);
        assert_eq!(y, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }
}
