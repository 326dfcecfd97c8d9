//! Sentence convolution, the attention-gated layer, dropout and the dense
//! softmax head, each with a hand-derived backward pass.
//!
//! The tensor-level functions validate shapes and are what callers and tests
//! use. The slice kernels underneath (`window_conv`, `same_conv` and their
//! backward passes) are shared with the model, which runs them over many
//! feature maps at once without re-wrapping every slice in a [`Tensor`].

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Zero padding placed before and after a feature map so that a stride-1
/// convolution with a window of `k` keeps the map's length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaddingSpec {
    pub top: usize,
    pub down: usize,
}

/// `k - 1` padded positions, the smaller half on top.
pub fn compute_padding(k: usize) -> Result<PaddingSpec> {
    if k == 0 {
        return Err(Error::InvalidArgument("attention window must be at least 1".into()));
    }
    let need = k - 1;
    Ok(PaddingSpec {
        top: need / 2,
        down: need - need / 2,
    })
}

/// Dot product of `weights` with every `weights.len()`-long window of `input`
/// that starts on a row boundary; `out[i]` receives window `i` plus `bias`.
pub fn window_conv(input: &[f64], row_len: usize, weights: &[f64], bias: f64, out: &mut [f64]) {
    let span = weights.len();
    for (i, o) in out.iter_mut().enumerate() {
        let window = &input[i * row_len..i * row_len + span];
        *o = dot(weights, window) + bias;
    }
}

/// Backward of [`window_conv`]: accumulates into the weight, bias and input gradients.
pub fn window_conv_backward(
    input: &[f64],
    row_len: usize,
    weights: &[f64],
    grad_out: &[f64],
    grad_weights: &mut [f64],
    grad_bias: &mut f64,
    grad_input: &mut [f64],
) {
    let span = weights.len();
    for (i, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        *grad_bias += g;
        let start = i * row_len;
        let window = &input[start..start + span];
        for (gw, &x) in grad_weights.iter_mut().zip(window) {
            *gw += g * x;
        }
        for (gx, &w) in grad_input[start..start + span].iter_mut().zip(weights) {
            *gx += g * w;
        }
    }
}

/// Stride-1 convolution of a 1-D map with `kernel` under same-size zero padding.
pub fn same_conv(input: &[f64], kernel: &[f64], out: &mut [f64]) {
    let top = (kernel.len() - 1) / 2;
    let len = input.len();
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (r, &v) in kernel.iter().enumerate() {
            // position i + r - top in the unpadded map
            if let Some(pos) = (i + r).checked_sub(top) {
                if pos < len {
                    acc += v * input[pos];
                }
            }
        }
        *o = acc;
    }
}

/// Backward of [`same_conv`]. Padded positions absorb no gradient.
pub fn same_conv_backward(
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    grad_kernel: &mut [f64],
    grad_input: &mut [f64],
) {
    let top = (kernel.len() - 1) / 2;
    let len = input.len();
    for (i, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (r, &v) in kernel.iter().enumerate() {
            if let Some(pos) = (i + r).checked_sub(top) {
                if pos < len {
                    grad_kernel[r] += g * input[pos];
                    grad_input[pos] += g * v;
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators; the order is fixed, so results are reproducible.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// One first-layer kernel: weights `(h, d)` or `(h, d, channels)` plus a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceConvKernel {
    pub weights: Tensor,
    pub bias: f64,
}

impl SentenceConvKernel {
    pub fn new(weights: Tensor, bias: f64) -> Result<Self> {
        let rank = weights.shape().len();
        if !(rank == 2 || rank == 3) || weights.shape().contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "sentence kernel must have shape (h, d) or (h, d, channels), got {:?}",
                weights.shape()
            )));
        }
        Ok(Self { weights, bias })
    }

    /// Window size `h` in words.
    pub fn window(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Elements per input row: `d` times the channel count.
    fn row_len(&self) -> usize {
        self.weights.shape()[1..].iter().product()
    }
}

/// Cached forward state of a sentence convolution.
#[derive(Debug, Clone)]
pub struct SentenceConvState {
    input: Tensor,
    pre_activation: Tensor,
    output: Tensor,
    activation: Activation,
}

impl SentenceConvState {
    /// The feature map `C`, one value per window position.
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    pub fn pre_activation(&self) -> &Tensor {
        &self.pre_activation
    }
}

#[derive(Debug, Clone)]
pub struct SentenceConvGrads {
    pub weights: Tensor,
    pub bias: f64,
    pub input: Tensor,
    pub activation_param: f64,
}

/// `c_i = f(sum(W * E[i..i+h]) + b)` over every window position.
pub fn sentence_conv_forward(
    embedded: &Tensor,
    kernel: &SentenceConvKernel,
    f: &Activation,
) -> Result<SentenceConvState> {
    let shape = embedded.shape();
    if shape.len() != kernel.weights.shape().len() || shape[1..] != kernel.weights.shape()[1..] {
        return Err(Error::ShapeMismatch {
            left: shape.to_vec(),
            right: kernel.weights.shape().to_vec(),
        });
    }
    let n = shape[0];
    let h = kernel.window();
    if n < h {
        return Err(Error::SentenceTooShort { len: n, window: h });
    }
    let mut pre = vec![0.0; n - h + 1];
    window_conv(embedded.data(), kernel.row_len(), kernel.weights.data(), kernel.bias, &mut pre);
    let output = Tensor::from_vec(pre.iter().map(|&x| f.forward(x)).collect());
    Ok(SentenceConvState {
        input: embedded.clone(),
        pre_activation: Tensor::from_vec(pre),
        output,
        activation: *f,
    })
}

pub fn sentence_conv_backward(
    kernel: &SentenceConvKernel,
    state: &SentenceConvState,
    grad_out: &Tensor,
) -> Result<SentenceConvGrads> {
    if grad_out.shape() != state.output.shape() {
        return Err(Error::StaleTrace(format!(
            "gradient of shape {:?} for a feature map of shape {:?}",
            grad_out.shape(),
            state.output.shape()
        )));
    }
    let f = state.activation;
    let pre = state.pre_activation.data();
    let grad_pre: Vec<f64> = grad_out
        .data()
        .iter()
        .zip(pre)
        .map(|(g, &x)| g * f.derivative(x))
        .collect();
    let activation_param = grad_out
        .data()
        .iter()
        .zip(pre)
        .map(|(g, &x)| g * f.param_derivative(x))
        .sum();

    let mut grad_weights = Tensor::zeros(kernel.weights.shape());
    let mut grad_input = Tensor::zeros(state.input.shape());
    let mut grad_bias = 0.0;
    window_conv_backward(
        state.input.data(),
        kernel.row_len(),
        kernel.weights.data(),
        &grad_pre,
        grad_weights.data_mut(),
        &mut grad_bias,
        grad_input.data_mut(),
    );
    Ok(SentenceConvGrads {
        weights: grad_weights,
        bias: grad_bias,
        input: grad_input,
        activation_param,
    })
}

/// Attention kernel `V` of window `k` and the gate bias it is paired with.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionKernel {
    pub weights: Tensor,
    pub bias: f64,
}

impl AttentionKernel {
    pub fn new(weights: Tensor, bias: f64) -> Result<Self> {
        if weights.shape().len() != 1 || weights.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "attention kernel must be a non-empty vector, got shape {:?}",
                weights.shape()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn window(&self) -> usize {
        self.weights.len()
    }
}

/// Attention weights `A`: same-size padded convolution of `c` with `V`.
/// No bias is added here; it enters in [`attention_gate`].
pub fn attention_weights(c: &Tensor, kernel: &AttentionKernel) -> Result<Tensor> {
    check_map(c)?;
    let mut out = vec![0.0; c.len()];
    same_conv(c.data(), kernel.weights.data(), &mut out);
    Ok(Tensor::from_vec(out))
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub weights: Tensor,
    pub input: Tensor,
}

pub fn attention_weights_backward(
    c: &Tensor,
    kernel: &AttentionKernel,
    grad_a: &Tensor,
) -> Result<AttentionGrads> {
    check_map(c)?;
    if grad_a.shape() != c.shape() {
        return Err(Error::StaleTrace(format!(
            "gradient of shape {:?} for a feature map of shape {:?}",
            grad_a.shape(),
            c.shape()
        )));
    }
    let mut weights = Tensor::zeros(kernel.weights.shape());
    let mut input = Tensor::zeros(c.shape());
    same_conv_backward(
        c.data(),
        kernel.weights.data(),
        grad_a.data(),
        weights.data_mut(),
        input.data_mut(),
    );
    Ok(AttentionGrads { weights, input })
}

/// Gated map `m[j] = c[j] * f(a[j] + bias)`.
pub fn attention_gate(c: &Tensor, a: &Tensor, bias: f64, f: &Activation) -> Result<Tensor> {
    if c.shape() != a.shape() {
        return Err(Error::ShapeMismatch {
            left: c.shape().to_vec(),
            right: a.shape().to_vec(),
        });
    }
    let data = c
        .data()
        .iter()
        .zip(a.data())
        .map(|(&cv, &av)| cv * f.forward(av + bias))
        .collect();
    Tensor::new(c.shape().to_vec(), data)
}

#[derive(Debug, Clone)]
pub struct GateGrads {
    pub input: Tensor,
    pub attention: Tensor,
    pub bias: f64,
    pub activation_param: f64,
}

/// Product rule through the gate: `dm/dc = f(a + b)`, `dm/da = c * f'(a + b)`.
pub fn attention_gate_backward(
    c: &Tensor,
    a: &Tensor,
    bias: f64,
    f: &Activation,
    grad_m: &Tensor,
) -> Result<GateGrads> {
    if c.shape() != a.shape() || grad_m.shape() != c.shape() {
        return Err(Error::StaleTrace(format!(
            "gate shapes disagree: c {:?}, a {:?}, grad {:?}",
            c.shape(),
            a.shape(),
            grad_m.shape()
        )));
    }
    let mut input = Vec::with_capacity(c.len());
    let mut attention = Vec::with_capacity(c.len());
    let mut grad_bias = 0.0;
    let mut grad_param = 0.0;
    for ((&g, &cv), &av) in grad_m.data().iter().zip(c.data()).zip(a.data()) {
        let z = av + bias;
        input.push(g * f.forward(z));
        let da = g * cv * f.derivative(z);
        attention.push(da);
        grad_bias += da;
        grad_param += g * cv * f.param_derivative(z);
    }
    Ok(GateGrads {
        input: Tensor::new(c.shape().to_vec(), input)?,
        attention: Tensor::new(c.shape().to_vec(), attention)?,
        bias: grad_bias,
        activation_param: grad_param,
    })
}

fn check_map(c: &Tensor) -> Result<()> {
    if c.shape().len() != 1 || c.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "feature map must be a non-empty vector, got shape {:?}",
            c.shape()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted-dropout scale factors: 0 with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    check_rate(rate)?;
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
        .collect())
}

/// Identity in eval mode; inverted dropout in train mode, so `E[out] = x`.
pub fn dropout_forward(x: &Tensor, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.len(), rate, rng)?;
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Tensor::new(x.shape().to_vec(), data)
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Fully connected layer feeding the softmax: weights `(features, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.shape().len() != 2 || bias.shape() != [weights.shape()[1]] {
            return Err(Error::ShapeMismatch {
                left: weights.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn num_classes(&self) -> usize {
        self.weights.shape()[1]
    }

    pub(crate) fn logits(&self, features: &[f64]) -> Vec<f64> {
        let classes = self.num_classes();
        let mut z = self.bias.data().to_vec();
        for (row, &x) in self.weights.data().chunks_exact(classes).zip(features) {
            if x == 0.0 {
                continue;
            }
            for (zc, &w) in z.iter_mut().zip(row) {
                *zc += x * w;
            }
        }
        z
    }
}

/// Numerically stable softmax (the maximum logit is subtracted first).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Vector-Jacobian product of softmax: gradient w.r.t. logits from a gradient w.r.t. probabilities.
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_probs)
        .map(|(p, g)| p * (g - inner))
        .collect()
}

#[derive(Debug, Clone)]
pub struct DenseState {
    features: Tensor,
    logits: Tensor,
    probs: Tensor,
}

impl DenseState {
    pub fn probabilities(&self) -> &Tensor {
        &self.probs
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits
    }
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weights: Tensor,
    pub bias: Tensor,
    pub features: Tensor,
}

pub fn dense_softmax_forward(features: &Tensor, layer: &DenseLayer) -> Result<DenseState> {
    if features.shape() != [layer.feature_dim()] {
        return Err(Error::ShapeMismatch {
            left: features.shape().to_vec(),
            right: vec![layer.feature_dim()],
        });
    }
    let z = layer.logits(features.data());
    let p = softmax(&z);
    Ok(DenseState {
        features: features.clone(),
        logits: Tensor::from_vec(z),
        probs: Tensor::from_vec(p),
    })
}

/// Backward of the dense layer given the gradient w.r.t. its logits
/// (for cross-entropy this is `p - onehot(label)`).
pub fn dense_softmax_backward(
    layer: &DenseLayer,
    state: &DenseState,
    grad_logits: &Tensor,
) -> Result<DenseGrads> {
    if grad_logits.shape() != state.logits.shape() {
        return Err(Error::StaleTrace(format!(
            "logit gradient of shape {:?} for logits of shape {:?}",
            grad_logits.shape(),
            state.logits.shape()
        )));
    }
    let mut weights = Tensor::zeros(layer.weights.shape());
    let mut features = vec![0.0; layer.feature_dim()];
    dense_backward(
        layer,
        state.features.data(),
        grad_logits.data(),
        weights.data_mut(),
        &mut features,
    );
    Ok(DenseGrads {
        weights,
        bias: grad_logits.clone(),
        features: Tensor::from_vec(features),
    })
}

pub(crate) fn dense_backward(
    layer: &DenseLayer,
    features: &[f64],
    grad_logits: &[f64],
    grad_weights: &mut [f64],
    grad_features: &mut [f64],
) {
    let classes = layer.num_classes();
    for (f, (&x, gx)) in features.iter().zip(grad_features.iter_mut()).enumerate() {
        let row = &layer.weights.data()[f * classes..(f + 1) * classes];
        let grow = &mut grad_weights[f * classes..(f + 1) * classes];
        let mut acc = 0.0;
        for c in 0..classes {
            grow[c] += x * grad_logits[c];
            acc += row[c] * grad_logits[c];
        }
        *gx = acc;
    }
}
