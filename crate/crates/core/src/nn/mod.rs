//! Minimal dense network stack with hand-written reverse-mode gradients.
//!
//! Networks are plain stacks of affine layers with an activation after
//! each; the last layer is normally [`Activation::Identity`]. Everything
//! runs in `f64`. Batches are row-major `(batch, features)` matrices and
//! weights are stored `(fan_in, fan_out)` so a layer is `X·W + b`.

mod adam;
mod loss;

pub use adam::{AdamConfig, AdamState};
pub use loss::{
    bound_logvar, diag_gauss_kl, diag_gauss_kl_grad, gaussian_nll, gaussian_nll_batch,
    sample_diag_gaussian, LOGVAR_MAX, LOGVAR_MIN,
};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, CabiError, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Swish,
    Relu,
    Tanh,
    Identity,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Swish => x * sigmoid(x),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation `x` and its image `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Swish => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    /// Uniform `±1/sqrt(fan_in)` weights, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_in, fan_out), |_| rng.uniform_range(-bound, bound));
        Self {
            weight,
            bias: Array1::zeros(fan_out),
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }
}

/// Per-layer intermediate values recorded by [`DenseNet::forward_train`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("cache of a non-empty net")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients with the same shapes as a [`DenseNet`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    /// `hidden.len()` hidden layers with activation `hidden_act`, then a
    /// linear output layer.
    pub fn new(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        rng: &mut SeededRng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input;
        for &h in hidden {
            layers.push(Layer::init(fan_in, h, hidden_act, rng));
            fan_in = h;
        }
        layers.push(Layer::init(fan_in, output, Activation::Identity, rng));
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(CabiError::InvalidArgument("network needs at least one layer".into()));
        }
        for l in &layers {
            ensure_dim(l.fan_out(), l.bias.len())?;
        }
        for pair in layers.windows(2) {
            ensure_dim(pair[0].fan_out(), pair[1].fan_in())?;
        }
        let net = Self { layers };
        if !net.params_flat().iter().all(|v| v.is_finite()) {
            return Err(CabiError::NonFinite("network parameters".into()));
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::fan_out))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Evaluates a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| CabiError::InvalidArgument(e.to_string()))?;
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure_dim(self.input_dim(), x.ncols())?;
        let mut h: Option<Array2<f64>> = None;
        for layer in &self.layers {
            let mut z = match &h {
                None => x.dot(&layer.weight),
                Some(prev) => prev.dot(&layer.weight),
            };
            z += &layer.bias;
            if layer.activation != Activation::Identity {
                let act = layer.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = Some(z);
        }
        Ok(h.expect("non-empty net"))
    }

    /// Forward pass that keeps what [`DenseNet::backward`] needs.
    pub fn forward_train(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        ensure_dim(self.input_dim(), x.ncols())?;
        let n = self.layers.len();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            post: Vec::with_capacity(n),
        };
        let mut current = x.to_owned();
        for layer in &self.layers {
            let mut z = current.dot(&layer.weight);
            z += &layer.bias;
            let act = layer.activation;
            let a = if act == Activation::Identity {
                z.clone()
            } else {
                z.mapv(|v| act.apply(v))
            };
            cache.inputs.push(current);
            cache.pre.push(z);
            current = a.clone();
            cache.post.push(a);
        }
        Ok(cache)
    }

    /// Reverse-mode pass. `d_out` is the gradient of the scalar loss with
    /// respect to the network output (already scaled for batch averaging).
    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<f64>) -> (Gradients, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            if act != Activation::Identity {
                ndarray::Zip::from(&mut delta)
                    .and(&cache.pre[i])
                    .and(&cache.post[i])
                    .for_each(|d, &z, &a| *d *= act.derivative(z, a));
            }
            let mut gw = cache.inputs[i].t().dot(&delta);
            if !gw.is_standard_layout() {
                gw = gw.as_standard_layout().into_owned();
            }
            let gb = delta.sum_axis(Axis(0));
            let d_in = delta.dot(&layer.weight.t());
            grads.push(LayerGrad { weight: gw, bias: gb });
            delta = d_in;
        }
        grads.reverse();
        (Gradients { layers: grads }, delta)
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        ensure_dim(self.num_params(), params.len())?;
        let mut offset = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = params[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Polyak averaging: `self ← tau·source + (1 − tau)·self`.
    pub fn soft_update_from(&mut self, source: &DenseNet, tau: f64) {
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            dst.weight.zip_mut_with(&src.weight, |d, &s| *d = tau * s + (1.0 - tau) * *d);
            dst.bias.zip_mut_with(&src.bias, |d, &s| *d = tau * s + (1.0 - tau) * *d);
        }
    }
}

/// Stacks row vectors into a `(rows, dim)` matrix.
pub fn rows_to_matrix(rows: &[Vec<f64>], dim: usize) -> Result<Array2<f64>> {
    let mut flat = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        ensure_dim(dim, r.len())?;
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), dim), flat).map_err(|e| CabiError::InvalidArgument(e.to_string()))
}

/// Splits a matrix back into row vectors.
pub fn matrix_to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}
