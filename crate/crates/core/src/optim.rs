//! AdamW with decoupled weight decay.

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{DenseNet, GradientSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 0.001,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| Error::Config {
            key: format!("optimizer.{key}"),
            message: message.into(),
        };
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(bad("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(bad("beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(bad("beta2", "must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(bad("eps", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(bad("weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

/// First and second moment estimates for one net.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(net: &DenseNet) -> Self {
        OptimizerState {
            m: GradientSet::zeros_like(net),
            v: GradientSet::zeros_like(net),
            step: 0,
        }
    }
}

/// One AdamW update of `net` in place. `term` names the loss the gradient
/// came from and is reported if the gradient is not finite.
pub fn adamw_step(
    net: &mut DenseNet,
    grads: &GradientSet,
    state: &mut OptimizerState,
    cfg: &AdamWConfig,
    term: &str,
) -> Result<()> {
    if !grads.mirrors(net) || !state.m.mirrors(net) {
        return Err(Error::shape("optimizer state or gradient does not mirror the net"));
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteLoss { term: term.into() });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p * decay - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    };
    for (((layer, g), m), v) in net
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.m.layers)
        .zip(&mut state.v.layers)
    {
        Zip::from(&mut layer.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .and(&g.weight)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        Zip::from(&mut layer.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .and(&g.bias)
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
    Ok(())
}
