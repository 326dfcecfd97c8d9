//! The attention-gated convolutional network.
//!
//! For every first-layer window `h` there are `t1` sentence kernels producing
//! feature maps `C`. Each attention window `k` owns one kernel `V` that is
//! slid over every one of those `t1` maps with same-size padding; the result
//! gates the map, `m = C * f(A + b)`. Each gated map is max-pooled to one
//! feature, giving `|l1| * |l2| * t1` features ordered by `(h, k, kernel)`,
//! which pass through dropout into the dense softmax layer.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::activation::{Activation, ActivationKind};
use crate::data::{init_unknown_words, pad_sentence, EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::layers::{
    dense_backward, dropout_mask, same_conv, same_conv_backward, softmax, window_conv, window_conv_backward,
    AttentionKernel, DenseLayer, Mode, SentenceConvKernel,
};
use crate::tensor::{he_init, max_over_time, xavier_init, Rng, Tensor};

/// Input-channel variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// One randomly initialized channel, fine-tuned.
    Rand,
    /// One pretrained channel, frozen.
    Static,
    /// One pretrained channel, fine-tuned.
    NonStatic,
    /// Pretrained channels; channel 0 fine-tuned, the others frozen.
    MultiChannel2,
    MultiChannel3,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Rand,
        Variant::Static,
        Variant::NonStatic,
        Variant::MultiChannel2,
        Variant::MultiChannel3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rand => "rand",
            Variant::Static => "static",
            Variant::NonStatic => "non-static",
            Variant::MultiChannel2 => "multichannel-2",
            Variant::MultiChannel3 => "multichannel-3",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Variant::MultiChannel2 => 2,
            Variant::MultiChannel3 => 3,
            _ => 1,
        }
    }

    pub fn channel_trainable(self, channel: usize) -> bool {
        match self {
            Variant::Static => false,
            _ => channel == 0,
        }
    }

    pub fn uses_pretrained(self) -> bool {
        self != Variant::Rand
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgcnnConfig {
    /// First-layer window sizes `h` (in words).
    pub window_sizes: Vec<usize>,
    /// Kernels per first-layer window size, `t1`.
    pub kernels_per_window: usize,
    /// Attention window sizes `k` (in features).
    pub attention_windows: Vec<usize>,
    pub embedding_dim: usize,
    pub num_classes: usize,
    pub variant: Variant,
    pub activation: ActivationKind,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for AgcnnConfig {
    fn default() -> Self {
        Self {
            window_sizes: vec![1, 2, 3, 4, 5],
            kernels_per_window: 100,
            attention_windows: vec![1, 3, 5],
            embedding_dim: 300,
            num_classes: 2,
            variant: Variant::Rand,
            activation: ActivationKind::Nlrelu,
            dropout_rate: 0.5,
            seed: 0,
        }
    }
}

impl AgcnnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.window_sizes.is_empty() || self.window_sizes.contains(&0) {
            return bad(format!("window sizes must be positive and non-empty: {:?}", self.window_sizes));
        }
        if self.attention_windows.is_empty() || self.attention_windows.contains(&0) {
            return bad(format!(
                "attention windows must be positive and non-empty: {:?}",
                self.attention_windows
            ));
        }
        if self.kernels_per_window == 0 || self.embedding_dim == 0 || self.num_classes == 0 {
            return bad("kernel count, embedding dimension and class count must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        Ok(())
    }

    /// Penultimate feature count, `|l1| * t1 * |l2|`.
    pub fn feature_dim(&self) -> usize {
        self.window_sizes.len() * self.kernels_per_window * self.attention_windows.len()
    }

    pub fn channels(&self) -> usize {
        self.variant.channels()
    }

    /// Shortest sentence every first-layer kernel can slide over.
    pub fn min_sentence_len(&self) -> usize {
        self.window_sizes.iter().copied().max().unwrap_or(1)
    }

    /// Number of scalar parameters for a vocabulary with `rows` embedding rows.
    pub fn parameter_count(&self, rows: usize) -> usize {
        let (d, ch, t1) = (self.embedding_dim, self.channels(), self.kernels_per_window);
        let embeddings = ch * rows * d;
        let conv: usize = self.window_sizes.iter().map(|h| t1 * (h * d * ch + 1)).sum();
        let attention: usize =
            self.window_sizes.len() * self.attention_windows.iter().map(|k| k + 1).sum::<usize>();
        let dense = self.feature_dim() * self.num_classes + self.num_classes;
        embeddings + conv + attention + dense + 2
    }

    /// `key = value` pairs, the same keys accepted by [`AgcnnConfig::from_pairs`].
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("window_sizes", join(&self.window_sizes)),
            ("kernels_per_window", self.kernels_per_window.to_string()),
            ("attention_windows", join(&self.attention_windows)),
            ("embedding_dim", self.embedding_dim.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("variant", self.variant.to_string()),
            ("activation", self.activation.to_string()),
            ("dropout_rate", self.dropout_rate.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Applies `key = value` settings on top of the defaults. Every key must be known.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut config = Self::default();
        for (key, value) in pairs {
            config.set(key, value)?;
        }
        Ok(config)
    }

    /// Sets one key. Returns an error naming the key for unknown keys and bad values.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let invalid = |what: &str| Error::InvalidArgument(format!("{key}: expected {what}, got `{value}`"));
        let list = || -> Result<Vec<usize>> {
            value
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| invalid("comma-separated integers")))
                .collect()
        };
        match key {
            "window_sizes" => self.window_sizes = list()?,
            "kernels_per_window" => self.kernels_per_window = value.parse().map_err(|_| invalid("an integer"))?,
            "attention_windows" => self.attention_windows = list()?,
            "embedding_dim" => self.embedding_dim = value.parse().map_err(|_| invalid("an integer"))?,
            "num_classes" => self.num_classes = value.parse().map_err(|_| invalid("an integer"))?,
            "variant" => self.variant = value.parse()?,
            "activation" => self.activation = value.parse()?,
            "dropout_rate" => self.dropout_rate = value.parse().map_err(|_| invalid("a number"))?,
            "seed" => self.seed = value.parse().map_err(|_| invalid("an integer"))?,
            _ => return Err(Error::InvalidArgument(format!("unknown model key `{key}`"))),
        }
        Ok(())
    }
}

/// The `t1` kernels of one first-layer window size, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBank {
    /// `(t1, h, d, channels)`.
    pub weights: Tensor,
    /// `(t1,)`.
    pub bias: Tensor,
}

impl ConvBank {
    pub fn window(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernels(&self) -> usize {
        self.weights.shape()[0]
    }

    fn kernel_len(&self) -> usize {
        self.weights.len() / self.kernels()
    }

    fn kernel_weights(&self, t: usize) -> &[f64] {
        let len = self.kernel_len();
        &self.weights.data()[t * len..(t + 1) * len]
    }

    /// Kernel `t` as a standalone layer kernel of shape `(h, d, channels)`.
    pub fn kernel(&self, t: usize) -> SentenceConvKernel {
        let weights = Tensor::new(self.weights.shape()[1..].to_vec(), self.kernel_weights(t).to_vec())
            .expect("bank slice has the kernel's shape");
        SentenceConvKernel {
            weights,
            bias: self.bias.data()[t],
        }
    }
}

/// Name, shape and trainability of one parameter tensor, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgcnnModel {
    config: AgcnnConfig,
    embeddings: Vec<Tensor>,
    conv: Vec<ConvBank>,
    /// Indexed by `h_index * |l2| + k_index`.
    attention: Vec<AttentionKernel>,
    dense: DenseLayer,
    /// First-layer and gate activations.
    activations: [Activation; 2],
}

/// Initializes a model.
///
/// Embedding rows come from `pretrained` where available and otherwise
/// follow [`init_unknown_words`]; the rand variant ignores `pretrained`.
/// Conv kernels and attention kernels are He-initialized (fan-in `h*d*channels`
/// and `k`), the dense layer is Xavier-initialized, and all biases start at 0.
pub fn build_model(
    config: &AgcnnConfig,
    vocab: &Vocabulary,
    pretrained: Option<&EmbeddingTable>,
    rng: &mut Rng,
) -> Result<AgcnnModel> {
    config.validate()?;
    let d = config.embedding_dim;
    let table = match pretrained {
        Some(table) if config.variant.uses_pretrained() => {
            if table.dim() != d {
                return Err(Error::EmbeddingDimension {
                    expected: d,
                    found: table.dim(),
                });
            }
            table.clone()
        }
        _ => EmbeddingTable::empty(d),
    };
    let embedding = init_unknown_words(vocab, &table, rng);
    let ch = config.channels();
    let t1 = config.kernels_per_window;

    let mut conv = Vec::with_capacity(config.window_sizes.len());
    for &h in &config.window_sizes {
        conv.push(ConvBank {
            weights: he_init(&[t1, h, d, ch], h * d * ch, rng)?,
            bias: Tensor::zeros(&[t1]),
        });
    }
    let mut attention = Vec::new();
    for _ in &config.window_sizes {
        for &k in &config.attention_windows {
            attention.push(AttentionKernel::new(he_init(&[k], k, rng)?, 0.0)?);
        }
    }
    let features = config.feature_dim();
    let dense = DenseLayer::new(
        xavier_init(&[features, config.num_classes], features, config.num_classes, rng)?,
        Tensor::zeros(&[config.num_classes]),
    )?;
    let act = Activation::new(config.activation);
    Ok(AgcnnModel {
        config: config.clone(),
        embeddings: vec![embedding; ch],
        conv,
        attention,
        dense,
        activations: [act, act],
    })
}

/// Intermediate values of one forward pass, kept for backpropagation and
/// for the feature-map visualizer.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    mode: Mode,
    tokens: Vec<usize>,
    input: Vec<f64>,
    banks: Vec<BankTrace>,
    features: Vec<f64>,
    dropout_scale: Option<Vec<f64>>,
    dropped: Vec<f64>,
    logits: Vec<f64>,
    probabilities: Vec<f64>,
}

/// Maps of one first-layer window size; every buffer is `(t1, len)` row-major.
#[derive(Debug, Clone)]
pub struct BankTrace {
    pub window: usize,
    pub len: usize,
    /// Convolution output before the activation.
    pub pre_activation: Vec<f64>,
    /// Feature maps `C`.
    pub maps: Vec<f64>,
    pub gates: Vec<GateTrace>,
}

#[derive(Debug, Clone)]
pub struct GateTrace {
    pub window: usize,
    /// Attention weights `A` before the bias.
    pub attention: Vec<f64>,
    /// Activated attention map `f(A + b)`.
    pub gate: Vec<f64>,
    /// `C * f(A + b)`.
    pub gated: Vec<f64>,
    /// Pooling position of each of the `t1` gated maps.
    pub argmax: Vec<usize>,
}

impl ForwardPass {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn banks(&self) -> &[BankTrace] {
        &self.banks
    }

    /// Pooled features before dropout.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }
}

/// Gradients of one example's loss.
///
/// The embedding gradient is kept as the gradient w.r.t. the looked-up input
/// matrix; [`GradientBuffer::accumulate`] scatters it into embedding rows.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub tokens: Vec<usize>,
    /// `(n, d, channels)`.
    pub input: Vec<f64>,
    pub conv_weights: Vec<Vec<f64>>,
    pub conv_bias: Vec<Vec<f64>>,
    pub attention_weights: Vec<Vec<f64>>,
    pub attention_bias: Vec<f64>,
    pub dense_weights: Vec<f64>,
    pub dense_bias: Vec<f64>,
    pub activation_params: [f64; 2],
}

impl AgcnnModel {
    pub fn config(&self) -> &AgcnnConfig {
        &self.config
    }

    pub fn embeddings(&self) -> &[Tensor] {
        &self.embeddings
    }

    pub fn conv_banks(&self) -> &[ConvBank] {
        &self.conv
    }

    /// Attention kernel for the `h_index`-th window size and `k_index`-th attention window.
    pub fn attention_kernel(&self, h_index: usize, k_index: usize) -> &AttentionKernel {
        &self.attention[h_index * self.config.attention_windows.len() + k_index]
    }

    pub fn dense(&self) -> &DenseLayer {
        &self.dense
    }

    pub fn activations(&self) -> [Activation; 2] {
        self.activations
    }

    pub fn vocab_rows(&self) -> usize {
        self.embeddings[0].shape()[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Parameter tensors in canonical order: embedding channels; per window
    /// size the conv weights then conv biases; per `(h, k)` the attention
    /// weights then gate bias; dense weights; dense bias; the two activation
    /// parameters (first layer, gate).
    pub fn param_infos(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        for (c, e) in self.embeddings.iter().enumerate() {
            out.push(ParamInfo {
                name: format!("embedding[{c}]"),
                shape: e.shape().to_vec(),
                trainable: self.config.variant.channel_trainable(c),
            });
        }
        for bank in &self.conv {
            let h = bank.window();
            out.push(ParamInfo {
                name: format!("conv[h={h}].weights"),
                shape: bank.weights.shape().to_vec(),
                trainable: true,
            });
            out.push(ParamInfo {
                name: format!("conv[h={h}].bias"),
                shape: bank.bias.shape().to_vec(),
                trainable: true,
            });
        }
        for (i, kernel) in self.attention.iter().enumerate() {
            let h = self.config.window_sizes[i / self.config.attention_windows.len()];
            let k = kernel.window();
            out.push(ParamInfo {
                name: format!("attention[h={h},k={k}].weights"),
                shape: vec![k],
                trainable: true,
            });
            out.push(ParamInfo {
                name: format!("attention[h={h},k={k}].bias"),
                shape: vec![1],
                trainable: true,
            });
        }
        out.push(ParamInfo {
            name: "dense.weights".into(),
            shape: self.dense.weights.shape().to_vec(),
            trainable: true,
        });
        out.push(ParamInfo {
            name: "dense.bias".into(),
            shape: self.dense.bias.shape().to_vec(),
            trainable: true,
        });
        out.push(ParamInfo {
            name: "activation.params".into(),
            shape: vec![2],
            trainable: self.activations[0].is_trainable(),
        });
        out
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.embeddings.iter().map(Tensor::data).collect();
        for bank in &self.conv {
            out.push(bank.weights.data());
            out.push(bank.bias.data());
        }
        for kernel in &self.attention {
            out.push(kernel.weights.data());
            out.push(std::slice::from_ref(&kernel.bias));
        }
        out.push(self.dense.weights.data());
        out.push(self.dense.bias.data());
        out
    }

    /// Mutable views in the same order as [`AgcnnModel::param_slices`] plus
    /// the activation parameters as the final entry.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.embeddings.iter_mut().map(Tensor::data_mut).collect();
        for bank in &mut self.conv {
            out.push(bank.weights.data_mut());
            out.push(bank.bias.data_mut());
        }
        for kernel in &mut self.attention {
            out.push(kernel.weights.data_mut());
            out.push(std::slice::from_mut(&mut kernel.bias));
        }
        out.push(self.dense.weights.data_mut());
        out.push(self.dense.bias.data_mut());
        out
    }

    /// Every parameter in canonical order, activation parameters included.
    pub fn flat_params(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.param_slices().into_iter().map(<[f64]>::to_vec).collect();
        out.push(self.activation_params().to_vec());
        out
    }

    pub fn activation_params(&self) -> [f64; 2] {
        [self.activations[0].param, self.activations[1].param]
    }

    pub(crate) fn set_activation_params(&mut self, params: [f64; 2]) {
        self.activations[0].param = params[0];
        self.activations[1].param = params[1];
    }

    /// Runs `f` over every parameter slice in canonical order, activation parameters last.
    pub fn with_params_mut<R>(&mut self, f: impl FnOnce(&mut [&mut [f64]]) -> R) -> R {
        let mut act = self.activation_params();
        let out = {
            let mut slices = self.param_slices_mut();
            slices.push(&mut act);
            f(&mut slices)
        };
        self.set_activation_params(act);
        out
    }

    /// Visits every parameter slice in canonical order, activation parameters last.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut [f64])) {
        self.with_params_mut(|slices| {
            for (i, s) in slices.iter_mut().enumerate() {
                f(i, s);
            }
        })
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        let rows = self.vocab_rows();
        if let Some(&bad) = tokens.iter().find(|&&t| t >= rows) {
            return Err(Error::TokenOutOfRange { index: bad, size: rows });
        }
        let min = self.config.min_sentence_len();
        if tokens.len() < min {
            return Err(Error::SentenceTooShort {
                len: tokens.len(),
                window: min,
            });
        }
        Ok(())
    }

    /// Embedding lookup into an `(n, d, channels)` matrix.
    fn embed(&self, tokens: &[usize]) -> Vec<f64> {
        let d = self.config.embedding_dim;
        let ch = self.embeddings.len();
        let mut out = vec![0.0; tokens.len() * d * ch];
        for (i, &tok) in tokens.iter().enumerate() {
            for (c, table) in self.embeddings.iter().enumerate() {
                let row = &table.data()[tok * d..(tok + 1) * d];
                for (j, &v) in row.iter().enumerate() {
                    out[(i * d + j) * ch + c] = v;
                }
            }
        }
        out
    }

    /// Class probabilities for a sentence of at least `min_sentence_len` tokens.
    pub fn forward(&self, tokens: &[usize], mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.forward_pass(tokens, mode, rng)?.probabilities))
    }

    /// Eval-mode forward pass with every intermediate map retained.
    pub fn trace(&self, tokens: &[usize]) -> Result<ForwardPass> {
        // eval mode never draws from the generator
        self.forward_pass(tokens, Mode::Eval, &mut Rng::new(0))
    }

    pub fn forward_pass(&self, tokens: &[usize], mode: Mode, rng: &mut Rng) -> Result<ForwardPass> {
        self.check_tokens(tokens)?;
        let cfg = &self.config;
        let t1 = cfg.kernels_per_window;
        let row_len = cfg.embedding_dim * self.embeddings.len();
        let n = tokens.len();
        let [conv_act, gate_act] = self.activations;
        let input = self.embed(tokens);

        let mut banks = Vec::with_capacity(self.conv.len());
        let mut features = Vec::with_capacity(cfg.feature_dim());
        for (hi, bank) in self.conv.iter().enumerate() {
            let h = bank.window();
            let len = n - h + 1;
            let mut pre = vec![0.0; t1 * len];
            for (t, out) in pre.chunks_exact_mut(len).enumerate() {
                window_conv(&input, row_len, bank.kernel_weights(t), bank.bias.data()[t], out);
            }
            let maps: Vec<f64> = pre.iter().map(|&x| conv_act.forward(x)).collect();

            let mut gates = Vec::with_capacity(cfg.attention_windows.len());
            for ki in 0..cfg.attention_windows.len() {
                let kernel = self.attention_kernel(hi, ki);
                let mut attention = vec![0.0; t1 * len];
                for (c, a) in maps.chunks_exact(len).zip(attention.chunks_exact_mut(len)) {
                    same_conv(c, kernel.weights.data(), a);
                }
                let gate: Vec<f64> = attention.iter().map(|&a| gate_act.forward(a + kernel.bias)).collect();
                let gated: Vec<f64> = maps.iter().zip(&gate).map(|(c, g)| c * g).collect();
                let mut argmax = Vec::with_capacity(t1);
                for m in gated.chunks_exact(len) {
                    let (value, idx) = max_over_time(m)?;
                    features.push(value);
                    argmax.push(idx);
                }
                gates.push(GateTrace {
                    window: kernel.window(),
                    attention,
                    gate,
                    gated,
                    argmax,
                });
            }
            banks.push(BankTrace {
                window: h,
                len,
                pre_activation: pre,
                maps,
                gates,
            });
        }

        let (dropout_scale, dropped) = match mode {
            Mode::Train if cfg.dropout_rate > 0.0 => {
                let scale = dropout_mask(features.len(), cfg.dropout_rate, rng)?;
                let dropped = features.iter().zip(&scale).map(|(x, s)| x * s).collect();
                (Some(scale), dropped)
            }
            _ => (None, features.clone()),
        };
        let logits = self.dense.logits(&dropped);
        let probabilities = softmax(&logits);
        Ok(ForwardPass {
            mode,
            tokens: tokens.to_vec(),
            input,
            banks,
            features,
            dropout_scale,
            dropped,
            logits,
            probabilities,
        })
    }

    /// Most probable class of an eval-mode pass, ties to the smallest index.
    /// Sentences shorter than the widest window are padded first.
    pub fn predict(&self, tokens: &[usize]) -> Result<usize> {
        let padded = pad_sentence(tokens, self.config.min_sentence_len());
        let pass = self.trace(&padded)?;
        Ok(argmax(pass.probabilities()))
    }

    /// Backpropagates `grad_logits` (gradient of the loss w.r.t. the
    /// pre-softmax logits) through a pass produced by this model.
    pub fn backward(&self, pass: &ForwardPass, grad_logits: &[f64]) -> Result<Gradients> {
        self.check_pass(pass, grad_logits)?;
        let cfg = &self.config;
        let t1 = cfg.kernels_per_window;
        let nk = cfg.attention_windows.len();
        let row_len = cfg.embedding_dim * self.embeddings.len();
        let [conv_act, gate_act] = self.activations;

        let mut dense_weights = vec![0.0; self.dense.weights.len()];
        let mut grad_features = vec![0.0; pass.features.len()];
        dense_backward(&self.dense, &pass.dropped, grad_logits, &mut dense_weights, &mut grad_features);
        if let Some(scale) = &pass.dropout_scale {
            grad_features.iter_mut().zip(scale).for_each(|(g, s)| *g *= s);
        }

        let mut input = vec![0.0; pass.input.len()];
        let mut conv_weights = Vec::with_capacity(self.conv.len());
        let mut conv_bias = Vec::with_capacity(self.conv.len());
        let mut attention_weights = Vec::with_capacity(self.attention.len());
        let mut attention_bias = Vec::with_capacity(self.attention.len());
        let mut activation_params = [0.0; 2];
        let mut feature = 0;

        for (hi, (bank, trace)) in self.conv.iter().zip(&pass.banks).enumerate() {
            let len = trace.len;
            let mut grad_maps = vec![0.0; t1 * len];
            for (ki, gate) in trace.gates.iter().enumerate() {
                let kernel = &self.attention[hi * nk + ki];
                let mut grad_kernel = vec![0.0; kernel.window()];
                let mut grad_bias = 0.0;
                let mut grad_attention = vec![0.0; len];
                for t in 0..t1 {
                    let g = grad_features[feature];
                    feature += 1;
                    if g == 0.0 {
                        continue;
                    }
                    // pooling routes the gradient to the argmax only
                    let j = gate.argmax[t];
                    let at = t * len + j;
                    grad_maps[at] += g * gate.gate[at];
                    let grad_gate = g * trace.maps[at];
                    let z = gate.attention[at] + kernel.bias;
                    let da = grad_gate * gate_act.derivative(z);
                    grad_bias += da;
                    activation_params[1] += grad_gate * gate_act.param_derivative(z);

                    grad_attention.fill(0.0);
                    grad_attention[j] = da;
                    let map = &trace.maps[t * len..(t + 1) * len];
                    same_conv_backward(
                        map,
                        kernel.weights.data(),
                        &grad_attention,
                        &mut grad_kernel,
                        &mut grad_maps[t * len..(t + 1) * len],
                    );
                }
                attention_weights.push(grad_kernel);
                attention_bias.push(grad_bias);
            }

            let mut grad_w = vec![0.0; bank.weights.len()];
            let mut grad_b = vec![0.0; t1];
            let klen = bank.kernel_len();
            for t in 0..t1 {
                let range = t * len..(t + 1) * len;
                let pre = &trace.pre_activation[range.clone()];
                let grad_pre: Vec<f64> = grad_maps[range.clone()]
                    .iter()
                    .zip(pre)
                    .map(|(g, &x)| {
                        activation_params[0] += g * conv_act.param_derivative(x);
                        g * conv_act.derivative(x)
                    })
                    .collect();
                window_conv_backward(
                    &pass.input,
                    row_len,
                    bank.kernel_weights(t),
                    &grad_pre,
                    &mut grad_w[t * klen..(t + 1) * klen],
                    &mut grad_b[t],
                    &mut input,
                );
            }
            conv_weights.push(grad_w);
            conv_bias.push(grad_b);
        }

        Ok(Gradients {
            tokens: pass.tokens.clone(),
            input,
            conv_weights,
            conv_bias,
            attention_weights,
            attention_bias,
            dense_weights,
            dense_bias: grad_logits.to_vec(),
            activation_params,
        })
    }

    fn check_pass(&self, pass: &ForwardPass, grad_logits: &[f64]) -> Result<()> {
        let cfg = &self.config;
        let n = pass.tokens.len();
        let expected_input = n * cfg.embedding_dim * self.embeddings.len();
        if pass.input.len() != expected_input
            || pass.banks.len() != self.conv.len()
            || pass.features.len() != cfg.feature_dim()
        {
            return Err(Error::StaleTrace("pass was produced by a differently shaped model".into()));
        }
        for (bank, trace) in self.conv.iter().zip(&pass.banks) {
            if trace.window != bank.window()
                || trace.gates.len() != cfg.attention_windows.len()
                || trace.maps.len() != cfg.kernels_per_window * trace.len
            {
                return Err(Error::StaleTrace(format!("window {} does not match", trace.window)));
            }
        }
        if grad_logits.len() != cfg.num_classes {
            return Err(Error::StaleTrace(format!(
                "{} logit gradients for {} classes",
                grad_logits.len(),
                cfg.num_classes
            )));
        }
        Ok(())
    }

    /// Creates a zero-initialized model with this layout, used when loading checkpoints.
    pub(crate) fn zeros(config: &AgcnnConfig, rows: usize) -> Result<Self> {
        config.validate()?;
        let (d, ch, t1) = (config.embedding_dim, config.channels(), config.kernels_per_window);
        let conv = config
            .window_sizes
            .iter()
            .map(|&h| ConvBank {
                weights: Tensor::zeros(&[t1, h, d, ch]),
                bias: Tensor::zeros(&[t1]),
            })
            .collect();
        let mut attention = Vec::new();
        for _ in &config.window_sizes {
            for &k in &config.attention_windows {
                attention.push(AttentionKernel::new(Tensor::zeros(&[k]), 0.0)?);
            }
        }
        let act = Activation::new(config.activation);
        Ok(Self {
            config: config.clone(),
            embeddings: vec![Tensor::zeros(&[rows, d]); ch],
            conv,
            attention,
            dense: DenseLayer::new(
                Tensor::zeros(&[config.feature_dim(), config.num_classes]),
                Tensor::zeros(&[config.num_classes]),
            )?,
            activations: [act, act],
        })
    }
}

/// Index of the largest value, ties to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Batch gradient accumulator laid out like the model's canonical parameter
/// list. Frozen embedding channels get no buffer.
#[derive(Debug, Clone)]
pub struct GradientBuffer {
    slots: Vec<Vec<f64>>,
    trainable: Vec<bool>,
    channels: usize,
    embedding_dim: usize,
    windows: usize,
    attention_windows: usize,
}

impl GradientBuffer {
    pub fn new(model: &AgcnnModel) -> Self {
        let infos = model.param_infos();
        let slots = infos
            .iter()
            .map(|info| {
                if info.trainable || !info.name.starts_with("embedding") {
                    vec![0.0; info.shape.iter().product()]
                } else {
                    Vec::new()
                }
            })
            .collect();
        Self {
            slots,
            trainable: infos.iter().map(|i| i.trainable).collect(),
            channels: model.embeddings.len(),
            embedding_dim: model.config.embedding_dim,
            windows: model.conv.len(),
            attention_windows: model.config.attention_windows.len(),
        }
    }

    pub fn clear(&mut self) {
        self.slots.iter_mut().for_each(|s| s.fill(0.0));
    }

    pub fn slots(&self) -> &[Vec<f64>] {
        &self.slots
    }

    pub fn trainable(&self) -> &[bool] {
        &self.trainable
    }

    /// Adds one example's gradients. Padding rows (token 0) never receive gradient.
    pub fn accumulate(&mut self, g: &Gradients) {
        let (ch, d) = (self.channels, self.embedding_dim);
        for c in 0..ch {
            let slot = &mut self.slots[c];
            if slot.is_empty() {
                continue;
            }
            for (i, &tok) in g.tokens.iter().enumerate() {
                if tok == 0 {
                    continue;
                }
                for j in 0..d {
                    slot[tok * d + j] += g.input[(i * d + j) * ch + c];
                }
            }
        }
        let mut idx = ch;
        for (w, b) in g.conv_weights.iter().zip(&g.conv_bias) {
            add(&mut self.slots[idx], w);
            add(&mut self.slots[idx + 1], b);
            idx += 2;
        }
        for (w, &b) in g.attention_weights.iter().zip(&g.attention_bias) {
            add(&mut self.slots[idx], w);
            self.slots[idx + 1][0] += b;
            idx += 2;
        }
        debug_assert_eq!(idx, ch + 2 * self.windows + 2 * self.windows * self.attention_windows);
        add(&mut self.slots[idx], &g.dense_weights);
        add(&mut self.slots[idx + 1], &g.dense_bias);
        add(&mut self.slots[idx + 2], &g.activation_params);
    }

    pub fn scale(&mut self, factor: f64) {
        for slot in &mut self.slots {
            slot.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

/// Reads `key = value` pairs into an ordered map, used by checkpoints.
pub(crate) fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad config line `{line}`")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::softmax;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from_tokens((0..n).map(|i| format!("w{i}")).collect()).unwrap()
    }

    pub(crate) fn micro_config() -> AgcnnConfig {
        AgcnnConfig {
            window_sizes: vec![2, 3],
            kernels_per_window: 2,
            attention_windows: vec![1, 3],
            embedding_dim: 4,
            num_classes: 2,
            variant: Variant::Rand,
            activation: ActivationKind::Nlrelu,
            dropout_rate: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn published_config_has_1500_features() {
        assert_eq!(AgcnnConfig::default().feature_dim(), 1500);
    }

    #[test]
    fn variant_names_and_channels() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!(Variant::MultiChannel3.channels(), 3);
        assert!(!Variant::Static.channel_trainable(0));
        assert!(Variant::MultiChannel2.channel_trainable(0));
        assert!(!Variant::MultiChannel2.channel_trainable(1));
        assert!("quad".parse::<Variant>().is_err());
    }

    #[test]
    fn config_pairs_round_trip() {
        let mut cfg = micro_config();
        cfg.dropout_rate = 0.3;
        let pairs = cfg.to_pairs();
        let back = AgcnnConfig::from_pairs(pairs.iter().map(|(k, v)| (*k, v.as_str()))).unwrap();
        assert_eq!(back, cfg);
        assert!(AgcnnConfig::from_pairs([("kernels", "3")]).is_err());
        assert!(AgcnnConfig::from_pairs([("kernels_per_window", "three")]).is_err());
    }

    #[test]
    fn micro_model_builds_and_runs() {
        let v = vocab(10);
        let model = build_model(&micro_config(), &v, None, &mut Rng::new(3)).unwrap();
        let p = model.forward(&[1, 2, 3, 4, 5, 6, 7], Mode::Eval, &mut Rng::new(0)).unwrap();
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(p.data().iter().all(|&x| x > 0.0));
        assert_eq!(model.parameter_count() + 2, micro_config().parameter_count(v.rows()));
    }

    #[test]
    fn same_seed_gives_identical_models() {
        let v = vocab(10);
        let a = build_model(&micro_config(), &v, None, &mut Rng::new(5)).unwrap();
        let b = build_model(&micro_config(), &v, None, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pretrained_dimension_mismatch_is_rejected() {
        let mut cfg = micro_config();
        cfg.variant = Variant::Static;
        let table = EmbeddingTable::from_vectors(3, [("w0".to_string(), vec![1.0, 2.0, 3.0])]).unwrap();
        assert!(matches!(
            build_model(&cfg, &vocab(4), Some(&table), &mut Rng::new(1)),
            Err(Error::EmbeddingDimension { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn multichannel_replicates_embedding() {
        let mut cfg = micro_config();
        cfg.variant = Variant::MultiChannel3;
        let table = EmbeddingTable::from_vectors(4, [("w1".to_string(), vec![1.0, 2.0, 3.0, 4.0])]).unwrap();
        let model = build_model(&cfg, &vocab(5), Some(&table), &mut Rng::new(1)).unwrap();
        assert_eq!(model.embeddings().len(), 3);
        assert_eq!(model.embeddings()[0], model.embeddings()[2]);
        assert_eq!(&model.embeddings()[0].data()[8..12], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(model.conv_banks()[0].weights.shape(), &[2, 2, 4, 3]);
    }

    #[test]
    fn zero_network_is_uniform() {
        let v = vocab(6);
        let mut model = build_model(&micro_config(), &v, None, &mut Rng::new(1)).unwrap();
        for bank in &mut model.conv {
            bank.weights.data_mut().fill(0.0);
        }
        model.dense.weights.data_mut().fill(0.0);
        let p = model.forward(&[1, 2, 3, 4, 5], Mode::Eval, &mut Rng::new(0)).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        assert_eq!(model.predict(&[1, 2]).unwrap(), 0);
    }

    #[test]
    fn argmax_ties_to_first() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }

    #[test]
    fn rejects_bad_tokens_and_short_sentences() {
        let model = build_model(&micro_config(), &vocab(3), None, &mut Rng::new(1)).unwrap();
        assert!(matches!(
            model.forward(&[1, 9, 2], Mode::Eval, &mut Rng::new(0)),
            Err(Error::TokenOutOfRange { index: 9, .. })
        ));
        assert!(matches!(
            model.forward(&[1, 2], Mode::Eval, &mut Rng::new(0)),
            Err(Error::SentenceTooShort { .. })
        ));
    }

    #[test]
    fn runs_on_any_length_without_rebuilding() {
        let model = build_model(&micro_config(), &vocab(10), None, &mut Rng::new(2)).unwrap();
        for n in 3..30 {
            let tokens: Vec<usize> = (0..n).map(|i| i % 11).collect();
            let pass = model.trace(&tokens).unwrap();
            assert_eq!(pass.features().len(), model.config().feature_dim());
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let model = build_model(&micro_config(), &vocab(10), None, &mut Rng::new(2)).unwrap();
        let a = model.forward(&[3, 1, 4, 1, 5], Mode::Eval, &mut Rng::new(1)).unwrap();
        let b = model.forward(&[3, 1, 4, 1, 5], Mode::Eval, &mut Rng::new(99)).unwrap();
        assert_eq!(a, b);
    }

    /// Straight-line forward with explicit loops, independent of the slice kernels.
    fn scripted_forward(model: &AgcnnModel, tokens: &[usize]) -> Vec<f64> {
        let cfg = model.config();
        let d = cfg.embedding_dim;
        let f = Activation::new(cfg.activation);
        let emb = &model.embeddings()[0];
        let mut features = Vec::new();
        for (hi, bank) in model.conv_banks().iter().enumerate() {
            let h = bank.window();
            let len = tokens.len() - h + 1;
            let maps: Vec<Vec<f64>> = (0..cfg.kernels_per_window)
                .map(|t| {
                    (0..len)
                        .map(|i| {
                            let mut s = bank.bias.data()[t];
                            for r in 0..h {
                                for j in 0..d {
                                    s += bank.weights.get(&[t, r, j, 0]).unwrap()
                                        * emb.get(&[tokens[i + r], j]).unwrap();
                                }
                            }
                            f.forward(s)
                        })
                        .collect()
                })
                .collect();
            for (ki, &k) in cfg.attention_windows.iter().enumerate() {
                let kernel = model.attention_kernel(hi, ki);
                let top = (k - 1) / 2;
                for map in &maps {
                    let mut best = f64::NEG_INFINITY;
                    for j in 0..len {
                        let mut a = 0.0;
                        for r in 0..k {
                            let pos = j as isize + r as isize - top as isize;
                            if pos >= 0 && (pos as usize) < len {
                                a += kernel.weights.data()[r] * map[pos as usize];
                            }
                        }
                        best = best.max(map[j] * f.forward(a + kernel.bias));
                    }
                    features.push(best);
                }
            }
        }
        let dense = model.dense();
        let logits: Vec<f64> = (0..cfg.num_classes)
            .map(|c| {
                dense.bias.data()[c]
                    + features
                        .iter()
                        .enumerate()
                        .map(|(i, x)| x * dense.weights.get(&[i, c]).unwrap())
                        .sum::<f64>()
            })
            .collect();
        softmax(&logits)
    }

    #[test]
    fn forward_matches_scripted_composition() {
        let mut cfg = micro_config();
        cfg.dropout_rate = 0.5;
        for seed in 0..5 {
            let mut model = build_model(&cfg, &vocab(10), None, &mut Rng::new(seed)).unwrap();
            let mut rng = Rng::new(seed + 100);
            for kernel in &mut model.attention {
                kernel.bias = rng.normal(0.0, 0.5);
            }
            let tokens = [1, 5, 2, 8, 3, 3, 9];
            let p = model.forward(&tokens, Mode::Eval, &mut rng).unwrap();
            for (a, b) in p.data().iter().zip(scripted_forward(&model, &tokens)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn backward_rejects_foreign_pass() {
        let small = build_model(&micro_config(), &vocab(10), None, &mut Rng::new(2)).unwrap();
        let mut cfg = micro_config();
        cfg.window_sizes = vec![2];
        let other = build_model(&cfg, &vocab(10), None, &mut Rng::new(2)).unwrap();
        let pass = other.trace(&[1, 2, 3]).unwrap();
        assert!(matches!(small.backward(&pass, &[0.1, -0.1]), Err(Error::StaleTrace(_))));
        let pass = small.trace(&[1, 2, 3]).unwrap();
        assert!(small.backward(&pass, &[0.1]).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let model = build_model(&micro_config(), &vocab(10), None, &mut Rng::new(2)).unwrap();
        let pass = model.trace(&[1, 2, 3, 4, 5, 6, 7]).unwrap();
        let g = model.backward(&pass, &[0.0, 0.0]).unwrap();
        assert!(g.input.iter().all(|&x| x == 0.0));
        assert!(g.conv_weights.iter().flatten().all(|&x| x == 0.0));
        assert!(g.attention_weights.iter().flatten().all(|&x| x == 0.0));
        assert!(g.dense_weights.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_buffer_skips_padding_and_frozen_channels() {
        let mut cfg = micro_config();
        cfg.variant = Variant::MultiChannel2;
        let model = build_model(&cfg, &vocab(10), None, &mut Rng::new(2)).unwrap();
        let pass = model.trace(&[1, 2, 0, 0]).unwrap();
        let g = model.backward(&pass, &[0.3, -0.3]).unwrap();
        let mut buf = GradientBuffer::new(&model);
        buf.accumulate(&g);
        assert!(buf.slots()[1].is_empty());
        assert!(buf.slots()[0][..4].iter().all(|&x| x == 0.0));
        assert!(buf.slots()[0][4..12].iter().any(|&x| x != 0.0));
        assert_eq!(buf.slots().len(), model.param_infos().len());
        for (slot, info) in buf.slots().iter().zip(model.param_infos()).skip(2) {
            assert_eq!(slot.len(), info.shape.iter().product::<usize>());
        }
    }
}
