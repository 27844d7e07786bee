//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Every body is a stack of affine layers with leaky-rectifier activations
//! between them, followed by an output head. Because the hidden activation is
//! piecewise linear, the input gradient of a scalar-output net is locally a
//! product of weight matrices and activation masks; the gradient penalty is
//! differentiated through that product in closed form (see
//! [`DenseNet::gradient_penalty`]).

mod models;

pub use models::{load_nets, save_nets, Architecture, ModelSet, NetKind, CHECKPOINT_MANIFEST};

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Standard deviation of the normal weight initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputHead {
    Linear,
    /// Rows are projected onto the sphere of the given radius.
    L2Normalize { radius: f64 },
    /// The final layer emits `[mean, logvar]`, each `latent_dim` wide.
    GaussianParams { latent_dim: usize },
    /// Elementwise logistic squashing, used with Min-Max scaled data.
    Sigmoid,
}

/// One affine layer, `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn zeros_like(&self) -> Layer {
        Layer {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|x| x.is_finite())
    }
}

/// Parameter gradients laid out exactly like the owning net's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Layer>,
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNet) -> Self {
        GradientSet {
            layers: net.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight.mapv_inplace(|x| x * factor);
            l.bias.mapv_inplace(|x| x * factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Layer::is_finite)
    }

    pub fn mirrors(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weight.dim() == l.weight.dim() && g.bias.len() == l.bias.len()
            })
    }

    /// All entries, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }
}

/// Intermediate values from a forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (the batch itself for layer 0).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    /// Output after the head.
    pub output: Array2<f64>,
}

impl ForwardCache {
    /// Post-activation output of the first layer, or its pre-activation when
    /// `post_activation` is false. For a single-layer net this is the head
    /// input.
    pub fn first_hidden(&self, post_activation: bool) -> &Array2<f64> {
        if post_activation && self.inputs.len() > 1 {
            &self.inputs[1]
        } else {
            &self.pre[0]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
    leaky_slope: f64,
    head: OutputHead,
}

fn leaky(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        slope * z
    }
}

fn leaky_grad(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        slope
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Layer>, leaky_slope: f64, head: OutputHead) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a net needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim() == 0 || l.out_dim() == 0 || l.bias.len() != l.out_dim() {
                return Err(Error::shape(format!("layer {i} has inconsistent shape")));
            }
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        let out = layers.last().expect("non-empty").out_dim();
        match head {
            OutputHead::GaussianParams { latent_dim } if out != 2 * latent_dim => {
                return Err(Error::shape(format!(
                    "gaussian head with latent dim {latent_dim} needs {} outputs, got {out}",
                    2 * latent_dim
                )))
            }
            OutputHead::L2Normalize { radius } if !(radius > 0.0) => {
                return Err(Error::invalid("l2 head radius must be positive"))
            }
            _ => {}
        }
        Ok(DenseNet {
            layers,
            leaky_slope,
            head,
        })
    }

    /// Normal(0, 0.02) weights and zero biases, seeded.
    ///
    /// `out_dim` is ignored for a Gaussian head, whose width is twice its
    /// latent dimension.
    pub fn init(
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        head: OutputHead,
        seed: u64,
    ) -> Result<Self> {
        let out_dim = match head {
            OutputHead::GaussianParams { latent_dim } => 2 * latent_dim,
            _ => out_dim,
        };
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(in_dim);
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        if dims.contains(&0) {
            return Err(Error::invalid(format!("layer dims must be positive: {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weight: Array2::from_shape_simple_fn((w[1], w[0]), || {
                    INIT_STD * rng.sample::<f64, _>(StandardNormal)
                }),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        DenseNet::from_layers(layers, LEAKY_SLOPE, head)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Width of the final layer (for a Gaussian head, `2k`).
    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    /// Width of the first layer's output.
    pub fn first_hidden_dim(&self) -> usize {
        self.layers[0].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Mutable layer access for optimizers; shapes must not change.
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Visits every parameter mutably, layer by layer, weights before biases.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn params_finite(&self) -> bool {
        self.layers.iter().all(Layer::is_finite)
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.in_dim() {
            return Err(Error::shape(format!(
                "net expects inputs of width {}, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut current = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weight.t());
            z += &layer.bias;
            inputs.push(current);
            if i + 1 < n {
                let slope = self.leaky_slope;
                current = z.mapv(|v| leaky(v, slope));
            } else {
                current = Array2::zeros((0, 0));
            }
            pre.push(z);
        }
        let raw = pre.last().expect("non-empty");
        let output = match self.head {
            OutputHead::Linear | OutputHead::GaussianParams { .. } => raw.clone(),
            OutputHead::Sigmoid => raw.mapv(sigmoid),
            OutputHead::L2Normalize { radius } => {
                let mut out = raw.clone();
                for mut row in out.rows_mut() {
                    let norm = row.dot(&row).sqrt();
                    if !(norm > 0.0) || !norm.is_finite() {
                        return Err(Error::Degenerate(
                            "net output is zero before its l2 head".into(),
                        ));
                    }
                    row.mapv_inplace(|v| v * radius / norm);
                }
                out
            }
        };
        Ok(ForwardCache {
            inputs,
            pre,
            output,
        })
    }

    /// First-layer representation and final output, in one pass.
    pub fn forward_hidden(
        &self,
        x: ArrayView2<f64>,
        post_activation: bool,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let cache = self.forward_cached(x)?;
        let hidden = cache.first_hidden(post_activation).clone();
        Ok((hidden, cache.output))
    }

    fn head_backward(&self, cache: &ForwardCache, d_out: ArrayView2<f64>) -> Array2<f64> {
        let raw = cache.pre.last().expect("non-empty");
        match self.head {
            OutputHead::Linear | OutputHead::GaussianParams { .. } => d_out.to_owned(),
            OutputHead::Sigmoid => {
                let mut d = d_out.to_owned();
                Zip::from(&mut d)
                    .and(&cache.output)
                    .for_each(|g, &y| *g *= y * (1.0 - y));
                d
            }
            OutputHead::L2Normalize { radius } => {
                // y = r u / |u|  =>  du = (r / |u|) (dy - yhat (yhat . dy))
                let mut d = Array2::zeros(raw.raw_dim());
                for ((u, dy), mut du) in raw.rows().into_iter().zip(d_out.rows()).zip(d.rows_mut()) {
                    let norm = u.dot(&u).sqrt();
                    let proj = u.dot(&dy) / norm;
                    let scale = radius / norm;
                    Zip::from(&mut du)
                        .and(&u)
                        .and(&dy)
                        .for_each(|g, &ui, &dyi| *g = scale * (dyi - ui / norm * proj));
                }
                d
            }
        }
    }

    /// Reverse pass: parameter gradients and the gradient with respect to the
    /// input, given the gradient of some scalar with respect to the head
    /// output. No batch averaging happens here.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_out: ArrayView2<f64>,
    ) -> (GradientSet, Array2<f64>) {
        let n = self.layers.len();
        let mut grads = GradientSet::zeros_like(self);
        let mut dz = self.head_backward(cache, d_out);
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            grads.layers[i].weight = dz.t().dot(&cache.inputs[i]);
            grads.layers[i].bias = dz.sum_axis(Axis(0));
            let da = dz.dot(&layer.weight);
            if i == 0 {
                return (grads, da);
            }
            let slope = self.leaky_slope;
            dz = da;
            Zip::from(&mut dz)
                .and(&cache.pre[i - 1])
                .for_each(|g, &z| *g *= leaky_grad(z, slope));
        }
        unreachable!("loop returns at layer 0")
    }

    /// Per-row gradient of a scalar-output net with respect to its input.
    pub fn input_gradient(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.require_scalar()?;
        let cache = self.forward_cached(x)?;
        let ones = Array2::ones((x.nrows(), 1));
        Ok(self.backward(&cache, ones.view()).1)
    }

    fn require_scalar(&self) -> Result<()> {
        if self.out_dim() != 1 || self.head != OutputHead::Linear {
            return Err(Error::invalid("expected a net with a single linear output"));
        }
        Ok(())
    }

    /// Gradient penalty `mean_b (|grad_x D(x_b)[cols]| - 1)^2` and its exact
    /// gradient with respect to every parameter.
    ///
    /// With a piecewise-linear body, `grad_x D = W_1^T S_1 W_2^T ... W_L^T`
    /// where `S_l` are the activation-slope masks at `x`. The masks are locally
    /// constant, so the penalty does not depend on `x` or on any bias within a
    /// linear region, and its weight gradients follow from pushing
    /// `q = d penalty / d grad` forward through the same chain:
    /// `dW_l = delta_l^T (S_{l-1} rho_{l-1})`, `rho_l = W_l S_{l-1} rho_{l-1}`,
    /// `rho_0 = q`.
    pub fn gradient_penalty(
        &self,
        x: ArrayView2<f64>,
        cols: Range<usize>,
    ) -> Result<(f64, GradientSet)> {
        self.require_scalar()?;
        if cols.end > self.in_dim() || cols.is_empty() {
            return Err(Error::shape("penalty columns fall outside the input"));
        }
        let batch = x.nrows();
        if batch == 0 {
            return Err(Error::shape("gradient penalty needs at least one point"));
        }
        let cache = self.forward_cached(x)?;
        let n = self.layers.len();
        let slope = self.leaky_slope;
        let masks: Vec<Array2<f64>> = cache.pre[..n - 1]
            .iter()
            .map(|z| z.mapv(|v| leaky_grad(v, slope)))
            .collect();

        // Backward deltas: delta_{L} = 1, delta_l = (delta_{l+1} W_{l+1}) * S_l.
        let mut deltas = vec![Array2::<f64>::ones((batch, 1)); n];
        for i in (0..n - 1).rev() {
            deltas[i] = deltas[i + 1].dot(&self.layers[i + 1].weight) * &masks[i];
        }
        let full = deltas[0].dot(&self.layers[0].weight);
        let g = full.slice(s![.., cols.clone()]);

        let mut value = 0.0;
        let mut q = Array2::<f64>::zeros((batch, self.in_dim()));
        for (b, row) in g.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            value += (norm - 1.0).powi(2);
            if norm > 0.0 {
                let coef = 2.0 * (norm - 1.0) / norm / batch as f64;
                q.slice_mut(s![b, cols.clone()]).assign(&row.mapv(|v| coef * v));
            }
        }
        value /= batch as f64;

        let mut grads = GradientSet::zeros_like(self);
        let mut rho = q;
        for i in 0..n {
            grads.layers[i].weight = deltas[i].t().dot(&rho);
            if i + 1 < n {
                rho = rho.dot(&self.layers[i].weight.t()) * &masks[i];
            }
        }
        Ok((value, grads))
    }

    /// Distance of each pre-activation from the rectifier kink; used by
    /// finite-difference checks to avoid non-differentiable points.
    pub fn min_kink_distance(&self, x: ArrayView2<f64>) -> Result<f64> {
        let cache = self.forward_cached(x)?;
        let n = self.layers.len();
        Ok(cache.pre[..n - 1]
            .iter()
            .flat_map(|z| z.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min))
    }
}

/// Splits a Gaussian-head output into `(mean, logvar)`.
pub fn split_gaussian(out: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let k = out.ncols() / 2;
    (
        out.slice(s![.., ..k]).to_owned(),
        out.slice(s![.., k..]).to_owned(),
    )
}

/// `z = mean + exp(logvar / 2) * eps`, elementwise.
pub fn reparameterize(
    mean: &Array2<f64>,
    logvar: &Array2<f64>,
    eps: &Array2<f64>,
) -> Result<Array2<f64>> {
    if mean.dim() != logvar.dim() || mean.dim() != eps.dim() {
        return Err(Error::shape("reparameterize needs equally shaped inputs"));
    }
    let mut z = mean.clone();
    Zip::from(&mut z)
        .and(logvar)
        .and(eps)
        .for_each(|z, &lv, &e| *z += (0.5 * lv).exp() * e);
    Ok(z)
}

/// Horizontally concatenates two equally tall matrices.
pub fn concat_cols(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a, b]).expect("row counts match")
}
