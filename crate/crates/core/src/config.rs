//! Training and evaluation configuration.

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierSettings;
use crate::dataspace::ClassPrior;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::optim::AdamWConfig;
use crate::prior::{KMeansSettings, PriorSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// `given_prior`, or the ground-truth prior of the evaluation labels.
    Given,
    Uniform,
    Cpe,
    Bbse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

/// Prior used to size the synthesized unseen set at evaluation time.
/// `Uniform` gives every class the same count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPrior {
    Current,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpace {
    /// Pseudo-attributes `R(v)`.
    Attribute,
    /// The regressor's first hidden layer.
    Hidden,
    Visual,
    /// `[v, h, R(v)]`.
    Concatenated,
}

impl FeatureSpace {
    pub const ALL: [FeatureSpace; 4] = [
        FeatureSpace::Attribute,
        FeatureSpace::Hidden,
        FeatureSpace::Visual,
        FeatureSpace::Concatenated,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Radius of the feature and attribute hyperspheres.
    pub radius: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Latent width; defaults to the attribute dimension.
    pub latent_dim: Option<usize>,
    pub hidden_width: usize,
    pub epochs_inductive: usize,
    pub epochs_transductive: usize,
    pub batch_size: usize,
    pub critic_steps: usize,
    pub level2_steps_per_level1_step: usize,
    pub optimizer: AdamWConfig,
    /// Synthesized features per class for prior estimation.
    pub synth_per_class_train: usize,
    /// Synthesized features per class for the final classifier.
    pub synth_per_class_eval: usize,
    pub prior_mode: PriorMode,
    pub given_prior: Option<Vec<f64>>,
    pub eval_prior: EvalPrior,
    pub classifier_epochs: usize,
    pub kmeans: KMeansSettings,
    /// Take the regressor hidden representation after the activation.
    pub hidden_post_activation: bool,
    pub inference_space: FeatureSpace,
    pub reset_optimizer_between_phases: bool,
    /// Add real seen training features to the generalized-mode classifier.
    pub gzsl_mix_real_seen: bool,
    /// Ceiling on the 50-step moving average of any critic's |adversary value|.
    pub adversary_ceiling: f64,
    pub checkpoint_every: Option<usize>,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            radius: 1.0,
            lambda: 1.0,
            alpha: 1.0,
            beta: 10.0,
            gamma: 10.0,
            latent_dim: None,
            hidden_width: 4096,
            epochs_inductive: 40,
            epochs_transductive: 60,
            batch_size: 64,
            critic_steps: 5,
            level2_steps_per_level1_step: 5,
            optimizer: AdamWConfig::default(),
            synth_per_class_train: 400,
            synth_per_class_eval: 400,
            prior_mode: PriorMode::Cpe,
            given_prior: None,
            eval_prior: EvalPrior::Uniform,
            classifier_epochs: 25,
            kmeans: KMeansSettings::default(),
            hidden_post_activation: true,
            inference_space: FeatureSpace::Concatenated,
            reset_optimizer_between_phases: false,
            gzsl_mix_real_seen: false,
            adversary_ceiling: 1e4,
            checkpoint_every: None,
            seed: 0,
            precision: Precision::F64,
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

impl TrainConfig {
    /// Settings for the desk-scale synthetic fixture. Smaller nets, more
    /// steps per epoch and a weaker cyclic term than the full-scale defaults.
    pub fn fixture() -> Self {
        TrainConfig {
            hidden_width: 128,
            batch_size: 32,
            epochs_inductive: 80,
            beta: 1.0,
            synth_per_class_train: 200,
            synth_per_class_eval: 200,
            ..Default::default()
        }
    }

    /// Fixture settings for the reduced normalization experiment; a narrower
    /// latent keeps the purely adversarial generator stable.
    pub fn norm_fixture() -> Self {
        TrainConfig {
            latent_dim: Some(4),
            ..Self::fixture()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn classifier_settings(&self) -> ClassifierSettings {
        ClassifierSettings {
            epochs: self.classifier_epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
        }
    }

    pub fn prior_settings(&self) -> PriorSettings {
        PriorSettings {
            classifier: self.classifier_settings(),
            kmeans: self.kmeans,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(config_err("radius", "must be positive"));
        }
        for (key, w) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(config_err(key, "loss weights must be finite and non-negative"));
            }
        }
        for (key, n) in [
            ("hidden_width", self.hidden_width),
            ("batch_size", self.batch_size),
            ("critic_steps", self.critic_steps),
            ("level2_steps_per_level1_step", self.level2_steps_per_level1_step),
            ("synth_per_class_train", self.synth_per_class_train),
            ("synth_per_class_eval", self.synth_per_class_eval),
            ("classifier_epochs", self.classifier_epochs),
            ("kmeans.max_iters", self.kmeans.max_iters),
        ] {
            if n == 0 {
                return Err(config_err(key, "must be at least 1"));
            }
        }
        if self.latent_dim == Some(0) {
            return Err(config_err("latent_dim", "must be at least 1"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(config_err("checkpoint_every", "must be at least 1"));
        }
        if !(self.kmeans.tol >= 0.0) {
            return Err(config_err("kmeans.tol", "must be non-negative"));
        }
        if !(self.adversary_ceiling > 0.0) {
            return Err(config_err("adversary_ceiling", "must be positive"));
        }
        self.optimizer.validate()?;
        if let Some(p) = &self.given_prior {
            ClassPrior::new(p.clone()).map_err(|e| config_err("given_prior", e.to_string()))?;
        }
        Ok(())
    }
}

/// Turns a serde error into a config error naming the offending key when
/// serde reports one.
pub(crate) fn config_parse_error(err: &serde_json::Error) -> Error {
    let msg = err.to_string();
    let key = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.starts_with("unknown field") || msg.starts_with("missing field"))
        .unwrap_or("<document>")
        .to_string();
    config_err(&key, msg)
}

/// Parses a strict JSON config; unknown keys are rejected.
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| config_parse_error(&e))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.lambda, c.alpha, c.beta, c.gamma), (1.0, 1.0, 10.0, 10.0));
        assert_eq!(c.radius, 1.0);
        assert_eq!(c.hidden_width, 4096);
        assert_eq!(c.level2_steps_per_level1_step, 5);
        assert_eq!(c.critic_steps, 5);
        assert_eq!(c.classifier_epochs, 25);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_named() {
        match parse_train_config(r#"{"gamma": 1.0, "gamme": 2.0}"#) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "gamme"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_are_named() {
        match parse_train_config(r#"{"batch_size": 0}"#) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "batch_size"),
            other => panic!("{other:?}"),
        }
        match parse_train_config(r#"{"optimizer": {"learning_rate": 0.0}}"#) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "optimizer.learning_rate"),
            other => panic!("{other:?}"),
        }
        assert!(parse_train_config(r#"{"lambda": -1}"#).is_err());
        assert!(parse_train_config(r#"{"given_prior": [0.5, 0.6]}"#).is_err());
    }

    #[test]
    fn round_trip_materializes_defaults() {
        let c = parse_train_config(r#"{"prior_mode": "bbse", "seed": 3}"#).unwrap();
        let echoed = serde_json::to_string(&c).unwrap();
        assert!(echoed.contains("\"hidden_width\":4096"));
        assert_eq!(parse_train_config(&echoed).unwrap(), c);
    }
}
