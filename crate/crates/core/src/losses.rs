//! Training objectives as functions of nets and a fixed minibatch.
//!
//! Each objective comes in two flavours: a value-only function, and a
//! `*_grad` variant that also returns exact parameter gradients for the nets
//! that term trains. Critic objectives follow the WGAN-GP convention: the
//! critic minimizes `-(mean real - mean fake) + w * penalty`.

use ndarray::{s, Array1, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::dataspace::l2_normalize_in_place;
use crate::error::{Error, Result};
use crate::nets::{concat_cols, reparameterize, split_gaussian, DenseNet, GradientSet};

/// Gradient penalty weight used throughout training.
pub const PENALTY_WEIGHT: f64 = 10.0;

/// Relative tolerance for the equal-radius precondition of interpolation.
const RADIUS_TOLERANCE: f64 = 1e-6;

/// How penalty interpolates are placed between real and fake points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Interpolation {
    /// `L2(t a + (1 - t) b, r)`; both endpoints must have norm `r`.
    Hypersphere { radius: f64 },
    /// Plain `t a + (1 - t) b`, for data that does not live on a sphere.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticSettings {
    pub penalty_weight: f64,
    pub interpolation: Interpolation,
}

impl CriticSettings {
    pub fn hypersphere(radius: f64) -> Self {
        CriticSettings {
            penalty_weight: PENALTY_WEIGHT,
            interpolation: Interpolation::Hypersphere { radius },
        }
    }
}

/// One minibatch worth of sampled inputs for every term.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub seen_v: Array2<f64>,
    pub seen_a: Array2<f64>,
    /// Absent in inductive training.
    pub unseen_v: Option<Array2<f64>>,
    /// Unseen attributes drawn through the current class prior.
    pub sampled_a_u: Array2<f64>,
    /// Latent noise for seen fakes.
    pub z_seen: Array2<f64>,
    /// Latent noise for unseen fakes.
    pub z_unseen: Array2<f64>,
    /// Reparameterization noise for the encoder.
    pub eps: Array2<f64>,
    pub t_seen: Array1<f64>,
    pub t_unseen: Array1<f64>,
    pub t_attr: Array1<f64>,
}

/// Value of one critic objective and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticLoss {
    /// What the critic's optimizer minimizes.
    pub critic_objective: f64,
    /// `mean D(real) - mean D(fake)`.
    pub adversary_value: f64,
    pub penalty: f64,
    pub real_mean: f64,
    pub fake_mean: f64,
}

fn check_rows(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: {a} rows vs {b} rows")));
    }
    Ok(())
}

fn finite(term: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { term: term.into() })
    }
}

/// `L2(t a + (1 - t) b, r)` for one pair of radius-`r` vectors.
pub fn hypersphere_interpolate(a: &[f64], b: &[f64], t: f64, r: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape("interpolation endpoints differ in length"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("interpolation weight {t} outside [0, 1]")));
    }
    for (name, v) in [("a", a), ("b", b)] {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - r).abs() > RADIUS_TOLERANCE * r {
            return Err(Error::invalid(format!(
                "endpoint {name} has norm {norm}, expected radius {r}"
            )));
        }
    }
    let mut out: Vec<f64> = a.iter().zip(b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
    l2_normalize_in_place(&mut out, r)?;
    Ok(out)
}

/// Row-wise interpolation between `real` and `fake` with one weight per row.
pub fn interpolate_rows(
    real: ArrayView2<f64>,
    fake: ArrayView2<f64>,
    t: &Array1<f64>,
    scheme: Interpolation,
) -> Result<Array2<f64>> {
    check_rows("interpolation", real.nrows(), fake.nrows())?;
    check_rows("interpolation weights", real.nrows(), t.len())?;
    let mut out = Array2::zeros(real.raw_dim());
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        match scheme {
            Interpolation::Hypersphere { radius } => {
                let p = hypersphere_interpolate(
                    &real.row(i).to_vec(),
                    &fake.row(i).to_vec(),
                    t[i],
                    radius,
                )?;
                row.assign(&Array1::from(p));
            }
            Interpolation::Linear => {
                Zip::from(&mut row)
                    .and(real.row(i))
                    .and(fake.row(i))
                    .for_each(|o, &x, &y| *o = t[i] * x + (1.0 - t[i]) * y);
            }
        }
    }
    Ok(out)
}

/// `mean (|grad_x D(x)| - 1)^2` over the given points.
pub fn gradient_penalty(critic: &DenseNet, points: ArrayView2<f64>) -> Result<f64> {
    Ok(critic.gradient_penalty(points, 0..critic.in_dim())?.0)
}

fn l1_rows(pred: &Array2<f64>, target: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let batch = pred.nrows() as f64;
    let mut sign = Array2::zeros(pred.raw_dim());
    let mut total = 0.0;
    Zip::from(&mut sign)
        .and(pred)
        .and(target)
        .for_each(|s, &p, &t| {
            let d = p - t;
            total += d.abs();
            *s = if d > 0.0 {
                1.0 / batch
            } else if d < 0.0 {
                -1.0 / batch
            } else {
                0.0
            };
        });
    (total / batch, sign)
}

/// Mean L1 distance between `R(v)` and the paired attributes.
pub fn regressor_supervised_loss(
    regressor: &DenseNet,
    seen_v: ArrayView2<f64>,
    seen_a: ArrayView2<f64>,
) -> Result<f64> {
    Ok(regressor_supervised_grad(regressor, seen_v, seen_a)?.0)
}

pub fn regressor_supervised_grad(
    regressor: &DenseNet,
    seen_v: ArrayView2<f64>,
    seen_a: ArrayView2<f64>,
) -> Result<(f64, GradientSet)> {
    check_rows("regressor batch", seen_v.nrows(), seen_a.nrows())?;
    let cache = regressor.forward_cached(seen_v)?;
    let (value, d_out) = l1_rows(&cache.output, seen_a);
    let (grads, _) = regressor.backward(&cache, d_out.view());
    Ok((finite("regressor_supervised", value)?, grads))
}

/// Shared critic machinery: objective value and critic gradients for scores
/// on `real` and `fake` inputs, with the penalty taken on `interp` restricted
/// to `penalty_cols`.
fn critic_objective_grad(
    critic: &DenseNet,
    real: ArrayView2<f64>,
    fake: ArrayView2<f64>,
    interp: ArrayView2<f64>,
    penalty_cols: std::ops::Range<usize>,
    settings: &CriticSettings,
    term: &str,
) -> Result<(CriticLoss, GradientSet)> {
    let real_cache = critic.forward_cached(real)?;
    let fake_cache = critic.forward_cached(fake)?;
    let real_mean = real_cache.output.mean().unwrap_or(0.0);
    let fake_mean = fake_cache.output.mean().unwrap_or(0.0);
    let (penalty, penalty_grads) = critic.gradient_penalty(interp, penalty_cols)?;

    let (mut grads, _) = critic.backward(
        &real_cache,
        Array2::from_elem((real.nrows(), 1), -1.0 / real.nrows() as f64).view(),
    );
    let (fake_grads, _) = critic.backward(
        &fake_cache,
        Array2::from_elem((fake.nrows(), 1), 1.0 / fake.nrows() as f64).view(),
    );
    grads.add_scaled(&fake_grads, 1.0);
    grads.add_scaled(&penalty_grads, settings.penalty_weight);

    let adversary_value = real_mean - fake_mean;
    let loss = CriticLoss {
        critic_objective: finite(term, -adversary_value + settings.penalty_weight * penalty)?,
        adversary_value,
        penalty,
        real_mean,
        fake_mean,
    };
    Ok((loss, grads))
}

/// Attribute critic: real unseen attributes drawn through the prior vs.
/// pseudo attributes `R(v^u)`.
pub fn attr_critic_loss(
    critic_attr: &DenseNet,
    regressor: &DenseNet,
    real_a_u: ArrayView2<f64>,
    unseen_v: ArrayView2<f64>,
    t: &Array1<f64>,
    settings: &CriticSettings,
) -> Result<CriticLoss> {
    Ok(attr_critic_grad(critic_attr, regressor, real_a_u, unseen_v, t, settings)?.0)
}

pub fn attr_critic_grad(
    critic_attr: &DenseNet,
    regressor: &DenseNet,
    real_a_u: ArrayView2<f64>,
    unseen_v: ArrayView2<f64>,
    t: &Array1<f64>,
    settings: &CriticSettings,
) -> Result<(CriticLoss, GradientSet)> {
    check_rows("attribute critic batch", real_a_u.nrows(), unseen_v.nrows())?;
    let fake = regressor.forward(unseen_v)?;
    let interp = interpolate_rows(real_a_u, fake.view(), t, settings.interpolation)?;
    critic_objective_grad(
        critic_attr,
        real_a_u,
        fake.view(),
        interp.view(),
        0..critic_attr.in_dim(),
        settings,
        "attr_critic",
    )
}

/// Conditional visual critic on seen pairs vs. `G(a^s, z)`. Interpolation
/// happens in visual space; the attribute condition passes through.
pub fn seen_critic_loss(
    critic: &DenseNet,
    generator: &DenseNet,
    seen_v: ArrayView2<f64>,
    seen_a: ArrayView2<f64>,
    z: ArrayView2<f64>,
    t: &Array1<f64>,
    settings: &CriticSettings,
) -> Result<CriticLoss> {
    Ok(seen_critic_grad(critic, generator, seen_v, seen_a, z, t, settings)?.0)
}

pub fn seen_critic_grad(
    critic: &DenseNet,
    generator: &DenseNet,
    seen_v: ArrayView2<f64>,
    seen_a: ArrayView2<f64>,
    z: ArrayView2<f64>,
    t: &Array1<f64>,
    settings: &CriticSettings,
) -> Result<(CriticLoss, GradientSet)> {
    check_rows("seen critic batch", seen_v.nrows(), seen_a.nrows())?;
    check_rows("seen critic noise", seen_a.nrows(), z.nrows())?;
    let fake_v = generator.forward(concat_cols(seen_a, z).view())?;
    let interp_v = interpolate_rows(seen_v, fake_v.view(), t, settings.interpolation)?;
    let d_v = seen_v.ncols();
    critic_objective_grad(
        critic,
        concat_cols(seen_v, seen_a).view(),
        concat_cols(fake_v.view(), seen_a).view(),
        concat_cols(interp_v.view(), seen_a).view(),
        0..d_v,
        settings,
        "seen_critic",
    )
}

/// Unconditional visual critic on real unseen features vs. `G(a^u, z)`.
pub fn unseen_critic_loss(
    critic_unseen: &DenseNet,
    generator: &DenseNet,
    unseen_v: ArrayView2<f64>,
    sampled_a_u: ArrayView2<f64>,
    z: ArrayView2<f64>,
    t: &Array1<f64>,
    settings: &CriticSettings,
) -> Result<CriticLoss> {
    Ok(unseen_critic_grad(critic_unseen, generator, unseen_v, sampled_a_u, z, t, settings)?.0)
}

pub fn unseen_critic_grad(
    critic_unseen: &DenseNet,
    generator: &DenseNet,
    unseen_v: ArrayView2<f64>,
    sampled_a_u: ArrayView2<f64>,
    z: ArrayView2<f64>,
    t: &Array1<f64>,
    settings: &CriticSettings,
) -> Result<(CriticLoss, GradientSet)> {
    check_rows("unseen critic batch", unseen_v.nrows(), sampled_a_u.nrows())?;
    check_rows("unseen critic noise", sampled_a_u.nrows(), z.nrows())?;
    let fake_v = generator.forward(concat_cols(sampled_a_u, z).view())?;
    let interp = interpolate_rows(unseen_v, fake_v.view(), t, settings.interpolation)?;
    critic_objective_grad(
        critic_unseen,
        unseen_v,
        fake_v.view(),
        interp.view(),
        0..critic_unseen.in_dim(),
        settings,
        "unseen_critic",
    )
}

/// Gradient of `mean critic(fake)` with respect to the net producing the
/// fakes, where `fake = producer(producer_in)` and the critic sees
/// `[fake, condition]`.
fn fake_score_grad(
    critic: &DenseNet,
    producer: &DenseNet,
    producer_in: ArrayView2<f64>,
    condition: Option<ArrayView2<f64>>,
) -> Result<(f64, GradientSet)> {
    let p_cache = producer.forward_cached(producer_in)?;
    let critic_in = match condition {
        Some(c) => concat_cols(p_cache.output.view(), c),
        None => p_cache.output.clone(),
    };
    let c_cache = critic.forward_cached(critic_in.view())?;
    let batch = producer_in.nrows() as f64;
    let mean = c_cache.output.mean().unwrap_or(0.0);
    let (_, d_in) = critic.backward(
        &c_cache,
        Array2::from_elem((producer_in.nrows(), 1), 1.0 / batch).view(),
    );
    let width = p_cache.output.ncols();
    let d_fake = d_in.slice(s![.., ..width]);
    let (grads, _) = producer.backward(&p_cache, d_fake);
    Ok((mean, grads))
}

/// `mean D^a(R(v^u))` and its gradient with respect to the regressor.
pub fn regressor_adversary_grad(
    critic_attr: &DenseNet,
    regressor: &DenseNet,
    unseen_v: ArrayView2<f64>,
) -> Result<(f64, GradientSet)> {
    fake_score_grad(critic_attr, regressor, unseen_v, None)
}

/// `mean D(G(a^s, z), a^s)` and its gradient with respect to the generator.
pub fn seen_generator_adversary_grad(
    critic: &DenseNet,
    generator: &DenseNet,
    seen_a: ArrayView2<f64>,
    z: ArrayView2<f64>,
) -> Result<(f64, GradientSet)> {
    check_rows("seen generator noise", seen_a.nrows(), z.nrows())?;
    fake_score_grad(critic, generator, concat_cols(seen_a, z).view(), Some(seen_a))
}

/// `mean D^u(G(a^u, z))` and its gradient with respect to the generator.
pub fn unseen_generator_adversary_grad(
    critic_unseen: &DenseNet,
    generator: &DenseNet,
    sampled_a_u: ArrayView2<f64>,
    z: ArrayView2<f64>,
) -> Result<(f64, GradientSet)> {
    check_rows("unseen generator noise", sampled_a_u.nrows(), z.nrows())?;
    fake_score_grad(critic_unseen, generator, concat_cols(sampled_a_u, z).view(), None)
}

/// Mean L1 distance between `R(G(a^u, z))` and `a^u`, with `R` frozen.
pub fn cyclic_regressor_loss(
    regressor: &DenseNet,
    generator: &DenseNet,
    sampled_a_u: ArrayView2<f64>,
    z: ArrayView2<f64>,
) -> Result<f64> {
    Ok(cyclic_regressor_grad(regressor, generator, sampled_a_u, z)?.0)
}

/// Returns the generator's gradient only; the regressor is not trained by
/// this term.
pub fn cyclic_regressor_grad(
    regressor: &DenseNet,
    generator: &DenseNet,
    sampled_a_u: ArrayView2<f64>,
    z: ArrayView2<f64>,
) -> Result<(f64, GradientSet)> {
    check_rows("cyclic batch", sampled_a_u.nrows(), z.nrows())?;
    let g_cache = generator.forward_cached(concat_cols(sampled_a_u, z).view())?;
    let r_cache = regressor.forward_cached(g_cache.output.view())?;
    let (value, d_out) = l1_rows(&r_cache.output, sampled_a_u);
    let (_, d_fake) = regressor.backward(&r_cache, d_out.view());
    let (grads, _) = generator.backward(&g_cache, d_fake.view());
    Ok((finite("cyclic_regressor", value)?, grads))
}

/// Conditional VAE objective: closed-form KL to the standard normal plus
/// squared-error reconstruction summed over feature dimensions, both averaged
/// over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VaeLoss {
    pub total: f64,
    pub kl: f64,
    pub reconstruction: f64,
}

/// `0.5 * sum_j (mu_j^2 + sigma_j^2 - 1 - log sigma_j^2)` for one row.
pub fn kl_standard_normal(mean: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

pub fn vae_loss(
    encoder: &DenseNet,
    generator: &DenseNet,
    seen_v: ArrayView2<f64>,
    seen_a: ArrayView2<f64>,
    eps: ArrayView2<f64>,
) -> Result<VaeLoss> {
    Ok(vae_grad(encoder, generator, seen_v, seen_a, eps)?.0)
}

pub fn vae_grad(
    encoder: &DenseNet,
    generator: &DenseNet,
    seen_v: ArrayView2<f64>,
    seen_a: ArrayView2<f64>,
    eps: ArrayView2<f64>,
) -> Result<(VaeLoss, GradientSet, GradientSet)> {
    check_rows("vae batch", seen_v.nrows(), seen_a.nrows())?;
    check_rows("vae noise", seen_v.nrows(), eps.nrows())?;
    let batch = seen_v.nrows() as f64;
    let e_cache = encoder.forward_cached(concat_cols(seen_v, seen_a).view())?;
    let (mean, logvar) = split_gaussian(&e_cache.output);
    if logvar.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            term: "vae_logvar".into(),
        });
    }
    let eps = eps.to_owned();
    let z = reparameterize(&mean, &logvar, &eps)?;
    let g_cache = generator.forward_cached(concat_cols(seen_a, z.view()).view())?;

    let diff = &g_cache.output - &seen_v;
    let reconstruction = diff.iter().map(|d| d * d).sum::<f64>() / batch;
    let kl = mean
        .rows()
        .into_iter()
        .zip(logvar.rows())
        .map(|(m, lv)| kl_standard_normal(&m.to_vec(), &lv.to_vec()))
        .sum::<f64>()
        / batch;

    let (g_grads, d_gen_in) = generator.backward(&g_cache, diff.mapv(|d| 2.0 * d / batch).view());
    let d_a = seen_a.ncols();
    let d_z = d_gen_in.slice(s![.., d_a..]);
    let k = mean.ncols();
    let mut d_enc = Array2::zeros(e_cache.output.raw_dim());
    for b in 0..mean.nrows() {
        for j in 0..k {
            let sigma = (0.5 * logvar[[b, j]]).exp();
            d_enc[[b, j]] = d_z[[b, j]] + mean[[b, j]] / batch;
            d_enc[[b, k + j]] =
                d_z[[b, j]] * 0.5 * sigma * eps[[b, j]] + 0.5 * (logvar[[b, j]].exp() - 1.0) / batch;
        }
    }
    let (e_grads, _) = encoder.backward(&e_cache, d_enc.view());
    let total = finite("vae", kl + reconstruction)?;
    Ok((
        VaeLoss {
            total,
            kl,
            reconstruction,
        },
        e_grads,
        g_grads,
    ))
}

/// Loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 1.0,
            alpha: 1.0,
            beta: 10.0,
            gamma: 10.0,
        }
    }
}

/// Per-term scalars from one step plus the weighted totals.
///
/// `level1_total` is what the regressor minimizes and `level2_total` what the
/// encoder and generator minimize. Adversarial terms enter the totals as
/// `+weight * adversary_value`, matching the min-max form where the critics
/// maximize the same quantity.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regressor_supervised: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attr_critic: Option<CriticLoss>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seen_critic: Option<CriticLoss>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unseen_critic: Option<CriticLoss>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cyclic_regressor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vae: Option<VaeLoss>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level1_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level2_total: Option<f64>,
}

/// Terms available for a level-1 composition.
#[derive(Debug, Clone, Copy)]
pub struct Level1Parts {
    pub regressor_supervised: f64,
    pub attr_critic: Option<CriticLoss>,
}

/// Terms available for a level-2 composition.
#[derive(Debug, Clone, Copy)]
pub struct Level2Parts {
    pub vae: VaeLoss,
    pub seen_critic: CriticLoss,
    pub cyclic_regressor: f64,
    pub unseen_critic: Option<CriticLoss>,
}

/// Regressor objective `L_R^s + lambda * adv(D^a)`.
pub fn level1_objective(parts: &Level1Parts, lambda: f64) -> LossBreakdown {
    let adv = parts.attr_critic.map_or(0.0, |c| c.adversary_value);
    LossBreakdown {
        regressor_supervised: Some(parts.regressor_supervised),
        attr_critic: parts.attr_critic,
        level1_total: Some(parts.regressor_supervised + lambda * adv),
        ..Default::default()
    }
}

/// Encoder/generator objective
/// `L_VAE + alpha * adv(D) + beta * L_R^u + gamma * adv(D^u)`.
pub fn level2_objective(parts: &Level2Parts, weights: &LossWeights) -> LossBreakdown {
    let unseen_adv = parts.unseen_critic.map_or(0.0, |c| c.adversary_value);
    LossBreakdown {
        seen_critic: Some(parts.seen_critic),
        unseen_critic: parts.unseen_critic,
        cyclic_regressor: Some(parts.cyclic_regressor),
        vae: Some(parts.vae),
        level2_total: Some(
            parts.vae.total
                + weights.alpha * parts.seen_critic.adversary_value
                + weights.beta * parts.cyclic_regressor
                + weights.gamma * unseen_adv,
        ),
        ..Default::default()
    }
}

/// Inductive composition: level-1 is `L_R^s` alone and level-2 drops the
/// unseen critic. Any term built from unseen visual features is rejected.
pub fn inductive_objective(
    level1: &Level1Parts,
    level2: &Level2Parts,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    if level1.attr_critic.is_some() {
        return Err(Error::InductiveContract(
            "attribute critic term uses unseen visual features".into(),
        ));
    }
    if level2.unseen_critic.is_some() {
        return Err(Error::InductiveContract(
            "unseen critic term uses unseen visual features".into(),
        ));
    }
    let l1 = level1_objective(level1, 0.0);
    let l2 = level2_objective(
        level2,
        &LossWeights {
            gamma: 0.0,
            ..*weights
        },
    );
    Ok(LossBreakdown {
        regressor_supervised: l1.regressor_supervised,
        level1_total: l1.level1_total,
        ..l2
    })
}
