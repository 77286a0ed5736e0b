//! Minimal deterministic neural kernels.
//!
//! Dense stacks with handwritten adjoints for the fixed model graphs — no
//! general autodiff tape. All arithmetic is 64-bit; identical inputs give
//! bit-identical outputs on one platform.

use std::ops::Range;

use rand::Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Selu,
    Sigmoid,
    Tanh,
    Linear,
}

/// Scaled exponential linear unit.
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Selu => selu(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// d activation / d preactivation, evaluated from the preactivation.
    fn derivative(self, preact: f64) -> f64 {
        match self {
            Activation::Selu => {
                if preact > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * preact.exp()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(preact);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = preact.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Shape of one dense layer, used for checkpoint headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// Row-major out_dim × in_dim.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl DenseLayer {
    fn param_count(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }
}

/// A chain of affine-then-activation layers with a deterministic flat
/// parameter layout: per layer, weights row-major then bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStack {
    layers: Vec<DenseLayer>,
}

/// Activations cached by [`DenseStack::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// inputs[l] is the input vector of layer l.
    inputs: Vec<Vec<f64>>,
    /// preacts[l] is W x + b of layer l.
    preacts: Vec<Vec<f64>>,
}

impl DenseStack {
    /// Glorot-uniform weights (±√(6/(fan_in+fan_out))), zero biases, drawn
    /// from the given seeded generator in layer order.
    pub fn init(shapes: &[LayerShape], rng: &mut impl Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(shapes.len());
        for (i, s) in shapes.iter().enumerate() {
            if s.in_dim == 0 || s.out_dim == 0 {
                return Err(Error::Dimension(format!("layer {i} has a zero dimension")));
            }
            if i > 0 && shapes[i - 1].out_dim != s.in_dim {
                return Err(Error::Dimension(format!(
                    "layer {i} input {} does not chain with previous output {}",
                    s.in_dim,
                    shapes[i - 1].out_dim
                )));
            }
            let limit = (6.0 / (s.in_dim + s.out_dim) as f64).sqrt();
            let weights = (0..s.in_dim * s.out_dim)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            layers.push(DenseLayer {
                weights,
                bias: vec![0.0; s.out_dim],
                in_dim: s.in_dim,
                out_dim: s.out_dim,
                activation: s.activation,
            });
        }
        Ok(Self { layers })
    }

    /// All-zero parameters with the given shapes (checkpoint loading).
    pub fn zeros(shapes: &[LayerShape]) -> Result<Self> {
        let mut dummy = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut stack = Self::init(shapes, &mut dummy)?;
        for layer in &mut stack.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        Ok(stack)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layers
            .iter()
            .map(|l| LayerShape {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                activation: l.activation,
            })
            .collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    /// Total learnable parameters, Σ (rows·cols + rows).
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Affine-then-activation chain; the cache is sufficient for
    /// [`backward`](Self::backward).
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "stack expects input of length {}, got {}",
                self.in_dim(),
                input.len()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut current = input.to_vec();
        for layer in &self.layers {
            let mut pre = layer.bias.clone();
            for (row, p) in pre.iter_mut().enumerate() {
                let w = &layer.weights[row * layer.in_dim..(row + 1) * layer.in_dim];
                let mut acc = 0.0;
                for (wi, xi) in w.iter().zip(&current) {
                    acc += wi * xi;
                }
                *p += acc;
            }
            inputs.push(std::mem::take(&mut current));
            current = pre.iter().map(|&z| layer.activation.apply(z)).collect();
            preacts.push(pre);
        }
        Ok((current, ForwardCache { inputs, preacts }))
    }

    /// Forward without keeping the cache.
    pub fn output(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.0)
    }

    /// Exact reverse-mode gradients of the forward map. Parameter gradients
    /// are accumulated (+=) into `param_grads`, which must match this
    /// stack's flat layout; returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        out_grad: &[f64],
        param_grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        if cache.inputs.len() != self.layers.len() || cache.preacts.len() != self.layers.len() {
            return Err(Error::Dimension("cache does not match stack depth".into()));
        }
        if out_grad.len() != self.out_dim() {
            return Err(Error::Dimension(format!(
                "output gradient length {} != stack output {}",
                out_grad.len(),
                self.out_dim()
            )));
        }
        if param_grads.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "gradient buffer {} != parameter count {}",
                param_grads.len(),
                self.param_count()
            )));
        }

        let mut upstream = out_grad.to_vec();
        let mut offset = param_grads.len();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[l];
            let pre = &cache.preacts[l];
            if input.len() != layer.in_dim || pre.len() != layer.out_dim {
                return Err(Error::Dimension(format!("stale cache at layer {l}")));
            }
            offset -= layer.param_count();
            let (w_grad, b_grad) = param_grads[offset..offset + layer.param_count()]
                .split_at_mut(layer.out_dim * layer.in_dim);

            let mut input_grad = vec![0.0; layer.in_dim];
            for row in 0..layer.out_dim {
                let dz = upstream[row] * layer.activation.derivative(pre[row]);
                b_grad[row] += dz;
                let w_row = &layer.weights[row * layer.in_dim..(row + 1) * layer.in_dim];
                let g_row = &mut w_grad[row * layer.in_dim..(row + 1) * layer.in_dim];
                for col in 0..layer.in_dim {
                    g_row[col] += dz * input[col];
                    input_grad[col] += dz * w_row[col];
                }
            }
            upstream = input_grad;
        }
        Ok(upstream)
    }

    /// Appends this stack's parameters to `out` in flat layout.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
    }

    /// Reads parameters from a flat slice; returns how many were consumed.
    pub fn read_params(&mut self, src: &[f64]) -> Result<usize> {
        if src.len() < self.param_count() {
            return Err(Error::Dimension(format!(
                "flat parameter slice has {} values, stack needs {}",
                src.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let w = layer.out_dim * layer.in_dim;
            layer.weights.copy_from_slice(&src[offset..offset + w]);
            offset += w;
            layer
                .bias
                .copy_from_slice(&src[offset..offset + layer.out_dim]);
            offset += layer.out_dim;
        }
        Ok(offset)
    }
}

/// Dot product accumulated in index order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Softmax with max-subtraction, accumulating sums in index order.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    let order: Vec<usize> = (0..scores.len()).collect();
    softmax_in_order(scores, &order)
}

/// Softmax whose reductions (max and denominator) run in the supplied
/// iteration order, so callers can pin bit-reproducible summation.
pub fn softmax_in_order(scores: &[f64], order: &[usize]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Empty("softmax of an empty score vector".into()));
    }
    debug_assert_eq!(scores.len(), order.len());
    let mut max = f64::NEG_INFINITY;
    for &i in order {
        if scores[i] > max {
            max = scores[i];
        }
    }
    let mut denom = 0.0;
    for &i in order {
        denom += (scores[i] - max).exp();
    }
    Ok(scores.iter().map(|&s| (s - max).exp() / denom).collect())
}

/// Adam moment accumulators over a flat parameter layout.
/// β1 = 0.9, β2 = 0.999, ε = 1e-8.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_count: usize, base_lr: f64) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            base_lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction; the effective rate is
/// `base_lr * lr_scale`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr_scale: f64,
) -> Result<()> {
    let range = 0..params.len();
    adam_step_segmented(params, grads, state, &[(range, lr_scale)])
}

/// Adam update where disjoint parameter segments use different lr scales
/// (the encoder decay) while sharing one optimizer state and step counter.
pub fn adam_step_segmented(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    segments: &[(Range<usize>, f64)],
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "adam layouts disagree: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let m_corr = 1.0 - state.beta1.powi(t);
    let v_corr = 1.0 - state.beta2.powi(t);

    for (range, lr_scale) in segments {
        if range.end > params.len() {
            return Err(Error::Dimension(format!(
                "segment {range:?} exceeds parameter count {}",
                params.len()
            )));
        }
        let rate = state.base_lr * lr_scale;
        for i in range.clone() {
            let g = grads[i];
            state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
            state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
            let m_hat = state.m[i] / m_corr;
            let v_hat = state.v[i] / v_corr;
            params[i] -= rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Compares an analytic gradient against central finite differences on
/// `probes` randomly chosen coordinates; returns the max relative error
/// (denominator floored at 1e-6).
pub fn grad_check<F>(
    f: F,
    params: &[f64],
    analytic: &[f64],
    probes: usize,
    h: f64,
    rng: &mut impl Rng,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "probe step h={h} must be > 0"
        )));
    }
    if params.len() != analytic.len() {
        return Err(Error::Dimension(format!(
            "analytic gradient length {} != parameter count {}",
            analytic.len(),
            params.len()
        )));
    }
    if params.is_empty() {
        return Ok(0.0);
    }

    let coords: Vec<usize> = if probes >= params.len() {
        (0..params.len()).collect()
    } else {
        rand::seq::index::sample(rng, params.len(), probes).into_vec()
    };

    let mut work = params.to_vec();
    let mut max_err: f64 = 0.0;
    for &i in &coords {
        let original = work[i];
        work[i] = original + h;
        let plus = f(&work);
        work[i] = original - h;
        let minus = f(&work);
        work[i] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let denom = numeric.abs().max(analytic[i].abs()).max(1e-6);
        max_err = max_err.max((numeric - analytic[i]).abs() / denom);
    }
    Ok(max_err)
}
