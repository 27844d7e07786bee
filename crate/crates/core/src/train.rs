//! Training schedule: inductive warm start, alternating transductive epochs
//! with per-epoch prior refresh, and the end-to-end pipeline.
//!
//! Two RNG streams drive sampling. The main stream covers everything the
//! inductive objective needs; the unseen stream covers draws that only exist
//! in transductive training (unseen batches, the unseen and attribute
//! critics). With the transductive weights at zero, a transductive epoch thus
//! performs the same updates to E, G, R and D as an inductive one.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::classifier::softmax_rows;
use crate::config::{Precision, PriorMode, TrainConfig};
use crate::dataspace::{
    l2_normalize, AttributeTable, ClassPrior, FeatureMatrix, FeatureNormalization, InductiveView,
    SplitDataset,
};
use crate::error::{Error, Result};
use crate::eval::{tzsl_evaluate, EvalReport, Snapshot};
use crate::losses::{
    attr_critic_grad, cyclic_regressor_grad, level1_objective, level2_objective,
    regressor_adversary_grad, regressor_supervised_grad, seen_critic_grad,
    seen_generator_adversary_grad, unseen_critic_grad, unseen_generator_adversary_grad, vae_grad,
    CriticLoss, CriticSettings, Interpolation, Level1Parts, Level2Parts, LossBreakdown,
    PENALTY_WEIGHT,
};
use crate::nets::{Architecture, DenseNet, ModelSet, NetKind, OutputHead};
use crate::optim::{adamw_step, OptimizerState};
use crate::prior::{bbse_estimate, cpe_estimate, prior_tv_distance, uniform_prior};
use crate::synth::{standard_normal, GeneratorSampler};

/// Window of the moving average checked against the adversary ceiling.
pub const ADVERSARY_WINDOW: usize = 50;

const UNSEEN_STREAM_SALT: u64 = 0x7A5D_0C7E_0000_0001;
const PRIOR_SEED_SALT: u64 = 0x0C9E_0000_0000_0003;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Inductive,
    Transductive,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub step: usize,
    pub level: u8,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_tv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorSnapshot {
    pub epoch: usize,
    pub prior: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv: Option<f64>,
}

/// Optimizer moments for all six nets.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOptimizers([OptimizerState; 6]);

impl NetOptimizers {
    pub fn new(models: &ModelSet) -> Self {
        NetOptimizers(NetKind::ALL.map(|k| OptimizerState::new(models.get(k))))
    }

    pub fn get(&self, kind: NetKind) -> &OptimizerState {
        &self.0[kind as usize]
    }

    fn get_mut(&mut self, kind: NetKind) -> &mut OptimizerState {
        &mut self.0[kind as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub models: ModelSet,
    pub optimizers: NetOptimizers,
    /// Prior used to sample unseen attributes.
    pub prior: ClassPrior,
    /// TV distance of `prior` to the ground truth, when known.
    pub prior_tv: Option<f64>,
    /// Epochs completed across both phases.
    pub epoch: usize,
    /// Generator/regressor steps taken; drives the level interleave.
    pub steps: u64,
    pub history: Vec<StepRecord>,
    pub prior_history: Vec<PriorSnapshot>,
    rng: ChaCha8Rng,
    unseen_rng: ChaCha8Rng,
    adversary_window: VecDeque<f64>,
}

impl TrainState {
    pub fn new(arch: &Architecture, num_unseen: usize, seed: u64) -> Result<Self> {
        let models = ModelSet::init(arch, seed)?;
        Ok(TrainState {
            optimizers: NetOptimizers::new(&models),
            models,
            prior: uniform_prior(num_unseen)?,
            prior_tv: None,
            epoch: 0,
            steps: 0,
            history: Vec::new(),
            prior_history: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            unseen_rng: ChaCha8Rng::seed_from_u64(seed ^ UNSEEN_STREAM_SALT),
            adversary_window: VecDeque::with_capacity(ADVERSARY_WINDOW),
        })
    }

    pub fn snapshot(&self) -> Snapshot<'_> {
        Snapshot {
            models: &self.models,
            prior: &self.prior,
        }
    }

    pub fn reset_optimizers(&mut self) {
        self.optimizers = NetOptimizers::new(&self.models);
    }

    fn update(&mut self, kind: NetKind, grads: &crate::nets::GradientSet, cfg: &TrainConfig) -> Result<()> {
        let net = self.models.get_mut(kind);
        adamw_step(net, grads, self.optimizers.get_mut(kind), &cfg.optimizer, kind.name())?;
        if cfg.precision == Precision::F32 {
            net.params_mut().for_each(|p| *p = *p as f32 as f64);
        }
        Ok(())
    }
}

/// Architecture implied by a dataset's dimensions and the config.
pub fn architecture(feature_dim: usize, attribute_dim: usize, cfg: &TrainConfig) -> Architecture {
    Architecture {
        feature_dim,
        attribute_dim,
        latent_dim: cfg.latent_dim.unwrap_or(attribute_dim),
        hidden_width: cfg.hidden_width,
        radius: cfg.radius,
    }
}

struct EpochData<'a> {
    seen_v: ArrayView2<'a, f64>,
    seen_labels: &'a [usize],
    seen_attr: &'a AttributeTable,
    unseen_attr: &'a AttributeTable,
    unseen_v: Option<ArrayView2<'a, f64>>,
    visual: CriticSettings,
    attribute: CriticSettings,
}

fn critic_settings(on_sphere: bool, radius: f64) -> CriticSettings {
    CriticSettings {
        penalty_weight: PENALTY_WEIGHT,
        interpolation: if on_sphere {
            Interpolation::Hypersphere { radius }
        } else {
            Interpolation::Linear
        },
    }
}

/// Hypersphere interpolation applies only when the data really lives on the
/// sphere the heads project to.
fn interpolation_settings(
    pre: Option<&crate::dataspace::Preprocessing>,
    cfg: &TrainConfig,
) -> (CriticSettings, CriticSettings) {
    let same_radius = |p: &crate::dataspace::Preprocessing| (p.radius - cfg.radius).abs() < 1e-12;
    let visual = pre.is_some_and(|p| p.features == FeatureNormalization::L2 && same_radius(p));
    let attribute = pre.is_some_and(|p| p.normalize_attributes && same_radius(p));
    (
        critic_settings(visual, cfg.radius),
        critic_settings(attribute, cfg.radius),
    )
}

fn batch(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, size.min(n)).into_vec()
}

fn uniform_weights(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.random::<f64>())
}

/// I.i.d. categorical labels from `prior`.
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
            // Rounding can leave the cumulative sum just below one.
            probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
        })
        .collect()
}

fn level2_step(state: &mut TrainState, data: &EpochData, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let k = state.models.latent_dim();
    let n_seen = data.seen_v.nrows();
    let mut seen_critic: Option<CriticLoss> = None;
    let mut unseen_critic: Option<CriticLoss> = None;
    for _ in 0..cfg.critic_steps {
        let idx = batch(&mut state.rng, n_seen, cfg.batch_size);
        let b = idx.len();
        let v = data.seen_v.select(Axis(0), &idx);
        let a = data.seen_attr.lookup(&idx.iter().map(|&i| data.seen_labels[i]).collect::<Vec<_>>());
        let z = standard_normal(&mut state.rng, b, k);
        let t = uniform_weights(&mut state.rng, b);
        let (loss, g) = seen_critic_grad(
            &state.models.critic_seen,
            &state.models.generator,
            v.view(),
            a.view(),
            z.view(),
            &t,
            &data.visual,
        )?;
        state.update(NetKind::CriticSeen, &g, cfg)?;
        seen_critic = Some(loss);

        if let Some(unseen_v) = data.unseen_v {
            let idx = batch(&mut state.unseen_rng, unseen_v.nrows(), cfg.batch_size);
            let b = idx.len();
            let vu = unseen_v.select(Axis(0), &idx);
            let labels = sample_labels(&mut state.unseen_rng, &state.prior, b);
            let au = data.unseen_attr.lookup(&labels);
            let z = standard_normal(&mut state.unseen_rng, b, k);
            let t = uniform_weights(&mut state.unseen_rng, b);
            let (loss, g) = unseen_critic_grad(
                &state.models.critic_unseen,
                &state.models.generator,
                vu.view(),
                au.view(),
                z.view(),
                &t,
                &data.visual,
            )?;
            state.update(NetKind::CriticUnseen, &g, cfg)?;
            unseen_critic = Some(loss);
        }
    }

    let idx = batch(&mut state.rng, n_seen, cfg.batch_size);
    let b = idx.len();
    let v = data.seen_v.select(Axis(0), &idx);
    let a = data.seen_attr.lookup(&idx.iter().map(|&i| data.seen_labels[i]).collect::<Vec<_>>());
    let eps = standard_normal(&mut state.rng, b, k);
    let (vae, g_enc, mut g_gen) = vae_grad(
        &state.models.encoder,
        &state.models.generator,
        v.view(),
        a.view(),
        eps.view(),
    )?;

    // G minimizes +alpha * (mean D(real) - mean D(fake)); only the fake term
    // depends on G.
    let z = standard_normal(&mut state.rng, b, k);
    let (_, g_adv) = seen_generator_adversary_grad(
        &state.models.critic_seen,
        &state.models.generator,
        a.view(),
        z.view(),
    )?;
    if cfg.alpha > 0.0 {
        g_gen.add_scaled(&g_adv, -cfg.alpha);
    }

    let labels = sample_labels(&mut state.rng, &state.prior, b);
    let au = data.unseen_attr.lookup(&labels);
    let z = standard_normal(&mut state.rng, b, k);
    let (cyclic, g_cyc) = cyclic_regressor_grad(
        &state.models.regressor,
        &state.models.generator,
        au.view(),
        z.view(),
    )?;
    if cfg.beta > 0.0 {
        g_gen.add_scaled(&g_cyc, cfg.beta);
    }

    if data.unseen_v.is_some() {
        let labels = sample_labels(&mut state.unseen_rng, &state.prior, b);
        let au = data.unseen_attr.lookup(&labels);
        let z = standard_normal(&mut state.unseen_rng, b, k);
        let (_, g_u) = unseen_generator_adversary_grad(
            &state.models.critic_unseen,
            &state.models.generator,
            au.view(),
            z.view(),
        )?;
        if cfg.gamma > 0.0 {
            g_gen.add_scaled(&g_u, -cfg.gamma);
        }
    }

    state.update(NetKind::Encoder, &g_enc, cfg)?;
    state.update(NetKind::Generator, &g_gen, cfg)?;

    let parts = Level2Parts {
        vae,
        seen_critic: seen_critic.expect("critic_steps >= 1"),
        cyclic_regressor: cyclic,
        unseen_critic,
    };
    Ok(level2_objective(&parts, &cfg.weights()))
}

fn level1_step(state: &mut TrainState, data: &EpochData, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let mut attr_critic: Option<CriticLoss> = None;
    if let Some(unseen_v) = data.unseen_v {
        for _ in 0..cfg.critic_steps {
            let idx = batch(&mut state.unseen_rng, unseen_v.nrows(), cfg.batch_size);
            let b = idx.len();
            let vu = unseen_v.select(Axis(0), &idx);
            let labels = sample_labels(&mut state.unseen_rng, &state.prior, b);
            let real_a = data.unseen_attr.lookup(&labels);
            let t = uniform_weights(&mut state.unseen_rng, b);
            let (loss, g) = attr_critic_grad(
                &state.models.critic_attr,
                &state.models.regressor,
                real_a.view(),
                vu.view(),
                &t,
                &data.attribute,
            )?;
            state.update(NetKind::CriticAttr, &g, cfg)?;
            attr_critic = Some(loss);
        }
    }

    let idx = batch(&mut state.rng, data.seen_v.nrows(), cfg.batch_size);
    let v = data.seen_v.select(Axis(0), &idx);
    let a = data.seen_attr.lookup(&idx.iter().map(|&i| data.seen_labels[i]).collect::<Vec<_>>());
    let (supervised, mut g_reg) = regressor_supervised_grad(&state.models.regressor, v.view(), a.view())?;
    if let Some(unseen_v) = data.unseen_v {
        let idx = batch(&mut state.unseen_rng, unseen_v.nrows(), cfg.batch_size);
        let vu = unseen_v.select(Axis(0), &idx);
        let (_, g_adv) = regressor_adversary_grad(&state.models.critic_attr, &state.models.regressor, vu.view())?;
        if cfg.lambda > 0.0 {
            g_reg.add_scaled(&g_adv, -cfg.lambda);
        }
    }
    state.update(NetKind::Regressor, &g_reg, cfg)?;

    let parts = Level1Parts {
        regressor_supervised: supervised,
        attr_critic,
    };
    Ok(level1_objective(&parts, cfg.lambda))
}

fn watch_adversaries(state: &mut TrainState, losses: &LossBreakdown, cfg: &TrainConfig) -> Result<()> {
    let critics = [
        ("critic_seen", losses.seen_critic),
        ("critic_unseen", losses.unseen_critic),
        ("critic_attr", losses.attr_critic),
    ];
    for (term, c) in critics.iter().filter_map(|(n, c)| c.map(|c| (*n, c))) {
        if !c.adversary_value.is_finite() || !c.critic_objective.is_finite() {
            return Err(Error::NonFiniteLoss { term: term.into() });
        }
    }
    if let Some(c) = losses.unseen_critic {
        if state.adversary_window.len() == ADVERSARY_WINDOW {
            state.adversary_window.pop_front();
        }
        state.adversary_window.push_back(c.adversary_value);
        let mean = state.adversary_window.iter().sum::<f64>() / state.adversary_window.len() as f64;
        if mean.abs() > cfg.adversary_ceiling {
            return Err(Error::Diverged {
                term: "critic_unseen adversary value".into(),
                value: mean,
            });
        }
    }
    Ok(())
}

fn run_epoch(state: &mut TrainState, data: &EpochData, cfg: &TrainConfig, phase: Phase) -> Result<()> {
    let steps = data.seen_v.nrows().div_ceil(cfg.batch_size);
    let cycle = cfg.level2_steps_per_level1_step as u64 + 1;
    for step in 0..steps {
        state.steps += 1;
        let level1 = state.steps.is_multiple_of(cycle);
        let losses = if level1 {
            level1_step(state, data, cfg)?
        } else {
            level2_step(state, data, cfg)?
        };
        watch_adversaries(state, &losses, cfg)?;
        state.history.push(StepRecord {
            phase,
            epoch: state.epoch,
            step,
            level: if level1 { 1 } else { 2 },
            losses,
            prior_tv: state.prior_tv,
        });
    }
    state.epoch += 1;
    Ok(())
}

/// Runs `epochs_inductive` epochs of the inductive objective on a fresh
/// state. Only seen data and attribute tables are reachable from `view`.
pub fn train_inductive(view: InductiveView, cfg: &TrainConfig) -> Result<TrainState> {
    train_inductive_with(view, cfg, &mut |_| Ok(()))
}

pub fn train_inductive_with(
    view: InductiveView,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    let arch = architecture(view.seen_features.dim(), view.seen_attributes.dim(), cfg);
    let mut state = TrainState::new(&arch, view.unseen_attributes.num_classes(), cfg.seed)?;
    let (visual, attribute) = interpolation_settings(view.preprocessing, cfg);
    let data = EpochData {
        seen_v: view.seen_features.view(),
        seen_labels: view.seen_labels,
        seen_attr: view.seen_attributes,
        unseen_attr: view.unseen_attributes,
        unseen_v: None,
        visual,
        attribute,
    };
    for _ in 0..cfg.epochs_inductive {
        run_epoch(&mut state, &data, cfg, Phase::Inductive)?;
        on_epoch(&state)?;
    }
    Ok(state)
}

fn check_state_matches(state: &TrainState, dataset: &SplitDataset) -> Result<()> {
    if state.models.feature_dim() != dataset.feature_dim()
        || state.models.attribute_dim() != dataset.attribute_dim()
        || state.prior.num_classes() != dataset.num_unseen_classes()
    {
        return Err(Error::shape("training state does not match the dataset"));
    }
    Ok(())
}

/// One transductive epoch using the state's current prior.
pub fn train_transductive_epoch(state: &mut TrainState, dataset: &SplitDataset, cfg: &TrainConfig) -> Result<()> {
    check_state_matches(state, dataset)?;
    let (visual, attribute) = interpolation_settings(dataset.preprocessing(), cfg);
    let data = EpochData {
        seen_v: dataset.seen_features().view(),
        seen_labels: dataset.seen_labels(),
        seen_attr: dataset.seen_attributes(),
        unseen_attr: dataset.unseen_attributes(),
        unseen_v: Some(dataset.unseen_features().view()),
        visual,
        attribute,
    };
    run_epoch(state, &data, cfg, Phase::Transductive)
}

/// Estimates the unseen prior for the given mode from the current generator.
pub fn estimate_prior(
    models: &ModelSet,
    dataset: &SplitDataset,
    cfg: &TrainConfig,
    mode: PriorMode,
    seed: u64,
) -> Result<ClassPrior> {
    let n_u = dataset.num_unseen_classes();
    match mode {
        PriorMode::Given => match &cfg.given_prior {
            Some(p) => {
                let p = ClassPrior::new(p.clone())?;
                if p.num_classes() != n_u {
                    return Err(Error::Config {
                        key: "given_prior".into(),
                        message: format!("{} entries for {n_u} unseen classes", p.num_classes()),
                    });
                }
                Ok(p)
            }
            None => dataset.true_unseen_prior().ok_or_else(|| {
                Error::MissingEvalData("prior_mode `given` needs given_prior or evaluation labels".into())
            }),
        },
        PriorMode::Uniform => uniform_prior(n_u),
        PriorMode::Cpe | PriorMode::Bbse => {
            let sampler = GeneratorSampler::new(&models.generator, dataset.unseen_attributes())?;
            let estimator = if mode == PriorMode::Cpe { cpe_estimate } else { bbse_estimate };
            estimator(
                &sampler,
                dataset.unseen_features().view(),
                cfg.synth_per_class_train,
                &cfg.prior_settings(),
                seed,
            )
        }
    }
}

/// Re-estimates the prior per `cfg.prior_mode` and records a snapshot.
pub fn refresh_prior(state: &mut TrainState, dataset: &SplitDataset, cfg: &TrainConfig) -> Result<()> {
    let seed = cfg.seed ^ PRIOR_SEED_SALT ^ (state.epoch as u64).wrapping_mul(0x9E37_79B9);
    let prior = estimate_prior(&state.models, dataset, cfg, cfg.prior_mode, seed)?;
    let tv = dataset
        .true_unseen_prior()
        .map(|t| prior_tv_distance(&prior, &t))
        .transpose()?;
    state.prior_history.push(PriorSnapshot {
        epoch: state.epoch,
        prior: prior.probs().to_vec(),
        tv,
    });
    state.prior = prior;
    state.prior_tv = tv;
    Ok(())
}

/// Inductive warm start, then transductive epochs each preceded by a prior
/// refresh, then evaluation.
pub fn run_pipeline(dataset: &SplitDataset, cfg: &TrainConfig) -> Result<(TrainState, EvalReport)> {
    run_pipeline_with(dataset, cfg, &mut |_| Ok(()))
}

/// As [`run_pipeline`], calling `on_epoch` after every completed epoch.
pub fn run_pipeline_with(
    dataset: &SplitDataset,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<(TrainState, EvalReport)> {
    cfg.validate()?;
    let quantized;
    let dataset = if cfg.precision == Precision::F32 {
        quantized = dataset.quantized_f32()?;
        &quantized
    } else {
        dataset
    };
    let mut state = train_inductive_with(dataset.inductive_view(), cfg, on_epoch)?;
    if cfg.reset_optimizer_between_phases {
        state.reset_optimizers();
    }
    for _ in 0..cfg.epochs_transductive {
        refresh_prior(&mut state, dataset, cfg)?;
        train_transductive_epoch(&mut state, dataset, cfg)?;
        on_epoch(&state)?;
    }
    if cfg.epochs_transductive == 0 {
        // The final classifier still needs a prior estimate.
        refresh_prior(&mut state, dataset, cfg)?;
    }
    let report = tzsl_evaluate(&state.snapshot(), dataset, cfg)?;
    Ok((state, report))
}

/// Baseline without any transductive epochs: the inductive objective runs
/// for the combined epoch budget and evaluation uses a uniform prior, since
/// no estimate can be formed without unseen features.
pub fn run_inductive_pipeline(dataset: &SplitDataset, cfg: &TrainConfig) -> Result<(TrainState, EvalReport)> {
    let total = TrainConfig {
        epochs_inductive: cfg.epochs_inductive + cfg.epochs_transductive,
        epochs_transductive: 0,
        ..cfg.clone()
    };
    total.validate()?;
    let quantized;
    let dataset = if cfg.precision == Precision::F32 {
        quantized = dataset.quantized_f32()?;
        &quantized
    } else {
        dataset
    };
    let state = train_inductive(dataset.inductive_view(), &total)?;
    let report = tzsl_evaluate(&state.snapshot(), dataset, cfg)?;
    Ok((state, report))
}

/// Replaces features by the latent code of an autoencoder tuned on seen
/// data with reconstruction, attribute-regression and classification heads.
pub fn pretune_features(dataset: &SplitDataset, cfg: &TrainConfig, epochs: usize) -> Result<SplitDataset> {
    cfg.validate()?;
    let d_v = dataset.feature_dim();
    let d_a = dataset.attribute_dim();
    let n_s = dataset.num_seen_classes();
    let h = cfg.hidden_width;
    let seed = cfg.seed ^ 0x9E7_0000;
    let mut encoder = DenseNet::init(d_v, &[h], d_v, OutputHead::Linear, seed)?;
    let mut decoder = DenseNet::init(d_v, &[h], d_v, OutputHead::Linear, seed + 1)?;
    let mut reg_head = DenseNet::init(d_v, &[], d_a, OutputHead::L2Normalize { radius: cfg.radius }, seed + 2)?;
    let mut cls_head = DenseNet::init(d_v, &[], n_s, OutputHead::Linear, seed + 3)?;
    let mut opts: Vec<OptimizerState> =
        [&encoder, &decoder, &reg_head, &cls_head].iter().map(|n| OptimizerState::new(n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let seen = dataset.seen_features().view();
    let labels = dataset.seen_labels();
    for _ in 0..epochs {
        let steps = seen.nrows().div_ceil(cfg.batch_size);
        for _ in 0..steps {
            let idx = batch(&mut rng, seen.nrows(), cfg.batch_size);
            let bsz = idx.len() as f64;
            let v = seen.select(Axis(0), &idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let a = dataset.seen_attributes().lookup(&y);

            let e_cache = encoder.forward_cached(v.view())?;
            let latent = &e_cache.output;

            let d_cache = decoder.forward_cached(latent.view())?;
            let diff = &d_cache.output - &v;
            let (g_dec, mut d_latent) = decoder.backward(&d_cache, diff.mapv(|d| 2.0 * d / bsz).view());

            let r_cache = reg_head.forward_cached(latent.view())?;
            let sign = (&r_cache.output - &a).mapv(|d| d.signum() * (d != 0.0) as u8 as f64 / bsz);
            let (g_reg, d_lat_r) = reg_head.backward(&r_cache, sign.view());
            d_latent += &d_lat_r;

            let c_cache = cls_head.forward_cached(latent.view())?;
            let mut d_logits = softmax_rows(&c_cache.output);
            for (r, &c) in y.iter().enumerate() {
                d_logits[[r, c]] -= 1.0;
            }
            d_logits.mapv_inplace(|x| x / bsz);
            let (g_cls, d_lat_c) = cls_head.backward(&c_cache, d_logits.view());
            d_latent += &d_lat_c;

            let (g_enc, _) = encoder.backward(&e_cache, d_latent.view());
            adamw_step(&mut encoder, &g_enc, &mut opts[0], &cfg.optimizer, "pretune_encoder")?;
            adamw_step(&mut decoder, &g_dec, &mut opts[1], &cfg.optimizer, "pretune_mse")?;
            adamw_step(&mut reg_head, &g_reg, &mut opts[2], &cfg.optimizer, "pretune_regressor")?;
            adamw_step(&mut cls_head, &g_cls, &mut opts[3], &cfg.optimizer, "pretune_classifier")?;
        }
    }

    let encode = |x: &FeatureMatrix| -> Result<FeatureMatrix> {
        let z: Array2<f64> = encoder.forward(x.view())?;
        FeatureMatrix::new(z).and_then(|m| m.map_rows(|r| l2_normalize(r, cfg.radius)))
    };
    let seen_test = dataset.seen_test().map(|t| encode(&t.features)).transpose()?;
    dataset.with_features(
        encode(dataset.seen_features())?,
        encode(dataset.unseen_features())?,
        seen_test,
    )
}

/// Number of pre-tuning epochs used by default.
pub const PRETUNE_EPOCHS: usize = 15;
