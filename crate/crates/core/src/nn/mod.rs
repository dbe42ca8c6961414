//! Small dense networks with an exact manual backward pass.
//!
//! Weights are stored row-major as `[outputs x inputs]`. All reductions run in
//! index order so that identical inputs give bitwise-identical outputs.

mod gradcheck;

pub use gradcheck::{central_difference, finite_diff_grad, finite_diff_grad_with_step, FD_STEP};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const SELU_SCALE: f64 = 1.050_700_987_355_480_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Selu,
    Sigmoid,
    Identity,
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Selu => {
                let scale = T::of(SELU_SCALE);
                if x > T::zero() {
                    scale * x
                } else {
                    scale * T::of(SELU_ALPHA) * (x.exp() - T::one())
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `pre`, given the activation output `post`.
    #[inline]
    pub fn derivative<T: Scalar>(self, pre: T, post: T) -> T {
        match self {
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Selu => {
                let scale = T::of(SELU_SCALE);
                if pre > T::zero() {
                    scale
                } else {
                    // d/dx scale*alpha*(e^x - 1) = post + scale*alpha
                    post + scale * T::of(SELU_ALPHA)
                }
            }
            Activation::Sigmoid => post * (T::one() - post),
            Activation::Identity => T::one(),
        }
    }

    /// Half-width multiplier for the uniform initializer: the bound is
    /// `gain / sqrt(fan_in)`. He-style for ReLU, LeCun-style otherwise.
    fn init_gain(self) -> f64 {
        match self {
            Activation::Relu => 6f64.sqrt(),
            Activation::Selu | Activation::Sigmoid | Activation::Identity => 3f64.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `[outputs x inputs]`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
            activation,
        }
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> T {
        self.weights[out * self.inputs + inp]
    }

    fn check(&self, index: usize) -> Result<()> {
        if self.inputs == 0 || self.outputs == 0 {
            return Err(Error::Shape(format!("layer {index} has a zero dimension")));
        }
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::Shape(format!(
                "layer {index}: weights {} / bias {} inconsistent with {}x{}",
                self.weights.len(),
                self.bias.len(),
                self.outputs,
                self.inputs
            )));
        }
        Ok(())
    }
}

/// Weights of a feed-forward network. Used for both extractors and classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    layers: Vec<Layer<T>>,
}

/// Intermediates cached by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    /// Input fed to each layer.
    pub inputs: Vec<Vec<T>>,
    pub pre_activations: Vec<Vec<T>>,
    pub activations: Vec<Vec<T>>,
}

impl<T> ForwardTrace<T> {
    pub fn len(&self) -> usize {
        self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGradient<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients with the same shape tree as the [`Mlp`] they differentiate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGradient<T>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.check(i)?;
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Shape(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    i,
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        Ok(Mlp { layers })
    }

    /// Uniform init in `±gain/sqrt(fan_in)` with zero biases.
    pub fn init(layer_sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 layer sizes, got {}",
                layer_sizes.len()
            )));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::Config(format!(
                "{} layer sizes need {} activations, got {}",
                layer_sizes.len(),
                layer_sizes.len() - 1,
                activations.len()
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .zip(activations)
            .map(|(dims, &activation)| {
                let (inputs, outputs) = (dims[0], dims[1]);
                let bound = activation.init_gain() / (inputs as f64).sqrt();
                let weights = (0..inputs * outputs)
                    .map(|_| T::of(rng.random_range(-bound..bound)))
                    .collect();
                Layer { inputs, outputs, weights, bias: vec![T::zero(); outputs], activation }
            })
            .collect();
        Mlp::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// True when `other` has the same layer dimensions and activations.
    pub fn same_shape(&self, other: &Mlp<T>) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.inputs == b.inputs && a.outputs == b.outputs && a.activation == b.activation
            })
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "layer 0 expects input length {}, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        Ok(())
    }

    /// Forward pass keeping every intermediate for [`Mlp::backward`].
    pub fn forward(&self, input: &[T]) -> Result<(Vec<T>, ForwardTrace<T>)> {
        self.check_input(input)?;
        let n = self.layers.len();
        let mut trace = ForwardTrace {
            inputs: Vec::with_capacity(n),
            pre_activations: Vec::with_capacity(n),
            activations: Vec::with_capacity(n),
        };
        let mut current = input.to_vec();
        for layer in &self.layers {
            let pre = affine(layer, &current);
            let post: Vec<T> = pre.iter().map(|&z| layer.activation.apply(z)).collect();
            trace.inputs.push(current);
            trace.pre_activations.push(pre);
            current = post.clone();
            trace.activations.push(post);
        }
        Ok((current, trace))
    }

    /// Forward pass without caching.
    pub fn predict(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        let mut current = input.to_vec();
        for layer in &self.layers {
            let mut pre = affine(layer, &current);
            for z in pre.iter_mut() {
                *z = layer.activation.apply(*z);
            }
            current = pre;
        }
        Ok(current)
    }

    /// Reverse-mode gradients of a scalar loss whose derivative with respect to
    /// the network output is `output_grad`. Returns parameter gradients and the
    /// gradient with respect to the network input.
    pub fn backward(&self, trace: &ForwardTrace<T>, output_grad: &[T]) -> Result<(Gradients<T>, Vec<T>)> {
        let n = self.layers.len();
        if trace.len() != n || trace.inputs.len() != n || trace.pre_activations.len() != n {
            return Err(Error::Shape(format!(
                "trace has {} layers, network has {}",
                trace.len(),
                n
            )));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "output gradient length {} does not match output size {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        let mut layer_grads: Vec<LayerGradient<T>> = Vec::with_capacity(n);
        let mut upstream = output_grad.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[idx];
            let pre = &trace.pre_activations[idx];
            let post = &trace.activations[idx];
            if input.len() != layer.inputs || pre.len() != layer.outputs || post.len() != layer.outputs {
                return Err(Error::Shape(format!("trace entry for layer {idx} has the wrong size")));
            }
            let delta: Vec<T> = (0..layer.outputs)
                .map(|o| upstream[o] * layer.activation.derivative(pre[o], post[o]))
                .collect();
            let mut weights = vec![T::zero(); layer.weights.len()];
            for (o, &d) in delta.iter().enumerate() {
                let row = &mut weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, &x) in row.iter_mut().zip(input) {
                    *w = d * x;
                }
            }
            let mut input_grad = vec![T::zero(); layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, &w) in input_grad.iter_mut().zip(row) {
                    *g += w * d;
                }
            }
            layer_grads.push(LayerGradient { weights, bias: delta });
            upstream = input_grad;
        }
        layer_grads.reverse();
        Ok((Gradients { layers: layer_grads }, upstream))
    }

    /// In-place `w <- w - lr * g` over every coordinate.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: T) -> Result<()> {
        self.check_gradients(grads)?;
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, &gw) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= lr * gw;
            }
            for (b, &gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
        Ok(())
    }

    /// Functional form of [`Mlp::sgd_step`].
    pub fn stepped(&self, grads: &Gradients<T>, lr: T) -> Result<Self> {
        let mut next = self.clone();
        next.sgd_step(grads, lr)?;
        Ok(next)
    }

    fn check_gradients(&self, grads: &Gradients<T>) -> Result<()> {
        let ok = grads.layers.len() == self.layers.len()
            && self
                .layers
                .iter()
                .zip(&grads.layers)
                .all(|(l, g)| l.weights.len() == g.weights.len() && l.bias.len() == g.bias.len());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("gradients do not match parameter shapes".into()))
        }
    }

    /// Flat views over every parameter block: weights then bias, per layer.
    pub fn param_blocks(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Coordinate-wise difference `self - other`, shaped as gradients.
    pub fn difference(&self, other: &Mlp<T>) -> Result<Gradients<T>> {
        if !self.same_shape(other) {
            return Err(Error::Shape("cannot subtract networks of different shapes".into()));
        }
        Ok(Gradients {
            layers: self
                .layers
                .iter()
                .zip(&other.layers)
                .map(|(a, b)| LayerGradient {
                    weights: a.weights.iter().zip(&b.weights).map(|(&x, &y)| x - y).collect(),
                    bias: a.bias.iter().zip(&b.bias).map(|(&x, &y)| x - y).collect(),
                })
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.param_blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

#[inline]
fn affine<T: Scalar>(layer: &Layer<T>, input: &[T]) -> Vec<T> {
    (0..layer.outputs)
        .map(|o| {
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            let mut acc = layer.bias[o];
            for (&w, &x) in row.iter().zip(input) {
                acc += w * x;
            }
            acc
        })
        .collect()
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &Mlp<T>) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![T::zero(); l.weights.len()],
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn blocks(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    fn same_shape(&self, other: &Gradients<T>) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.len() == b.weights.len() && a.bias.len() == b.bias.len())
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) -> Result<()> {
        self.add_scaled(other, T::one())
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Gradients<T>, factor: T) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape("gradient shapes differ".into()));
        }
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += factor * s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for block in self.blocks_mut() {
            for x in block {
                *x *= factor;
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// Coordinate-wise weighted combination of shape-identical networks.
///
/// Summation runs in list order starting from zero, so a single item with
/// weight 1 reproduces its input bitwise. Reordering the list changes results
/// only by floating-point rounding.
pub fn weighted_sum_params<T: Scalar>(items: &[(&Mlp<T>, T)]) -> Result<Mlp<T>> {
    let (first, _) = items
        .first()
        .ok_or_else(|| Error::Aggregation("cannot aggregate an empty list".into()))?;
    let total: T = items.iter().map(|&(_, w)| w).sum();
    let tolerance = T::of(1e-9).max(T::epsilon() * T::of(8.0 * items.len() as f64));
    if (total - T::one()).abs() > tolerance {
        return Err(Error::Aggregation(format!("weights sum to {total}, expected 1")));
    }
    for (i, (params, _)) in items.iter().enumerate() {
        if !first.same_shape(params) {
            return Err(Error::Shape(format!("aggregation item {i} differs in shape from item 0")));
        }
    }
    let mut out = (*first).clone();
    for block in out.param_blocks_mut() {
        block.fill(T::zero());
    }
    for (params, weight) in items {
        for (dst, src) in out.param_blocks_mut().into_iter().zip(params.param_blocks()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += *weight * s;
            }
        }
    }
    Ok(out)
}
