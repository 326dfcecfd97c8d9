//! Gradient checking, the layer-statistics simulation, feature-map heatmaps
//! and the activation sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::activation::{Activation, ActivationKind};
use crate::data::{EmbeddingTable, Sample, Vocabulary};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::{build_model, AgcnnConfig, AgcnnModel, ForwardPass, GradientBuffer};
use crate::tensor::{exact_sum, Rng};
use crate::training::{cross_entropy, cross_validate, evaluate, train, TrainConfig};

// ---------------------------------------------------------------------------
// gradient check

/// Result of comparing backpropagated gradients with finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_relative_error: f64,
    /// Name and flat index of the worst coordinate.
    pub worst: String,
    /// Number of coordinates compared.
    pub checked: usize,
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn loss_of(model: &AgcnnModel, tokens: &[usize], label: usize) -> Result<f64> {
    let pass = model.trace(tokens)?;
    Ok(cross_entropy(pass.probabilities(), label)?.0)
}

/// Distance of one eval-mode pass from the nearest non-differentiable point:
/// the smallest `|x|` over activation inputs (for kinds with a kink at 0)
/// and the smallest gap between the largest and second-largest value of a
/// pooled map, ignoring ties between exact zeros.
pub fn kink_margin(model: &AgcnnModel, pass: &ForwardPass) -> f64 {
    let kinked = !matches!(
        model.config().activation,
        ActivationKind::Sigmoid | ActivationKind::Softplus
    );
    let mut margin = f64::INFINITY;
    for (hi, bank) in pass.banks().iter().enumerate() {
        if kinked {
            margin = bank.pre_activation.iter().fold(margin, |m, x| m.min(x.abs()));
        }
        for (ki, gate) in bank.gates.iter().enumerate() {
            let bias = model.attention_kernel(hi, ki).bias;
            if kinked {
                margin = gate.attention.iter().fold(margin, |m, a| m.min((a + bias).abs()));
            }
            for map in gate.gated.chunks_exact(bank.len) {
                let mut sorted = map.to_vec();
                sorted.sort_by(|a, b| b.total_cmp(a));
                if sorted.len() > 1 && !(sorted[0] == 0.0 && sorted[1] == 0.0) {
                    margin = margin.min(sorted[0] - sorted[1]);
                }
            }
        }
    }
    margin
}

/// Compares every parameter gradient and the input gradient of one example
/// against fourth-order central differences with step `step`.
///
/// The input gradient is checked through embedding rows, so every token in
/// `tokens` must be distinct and non-zero.
pub fn gradient_check(model: &AgcnnModel, tokens: &[usize], label: usize, step: f64) -> Result<GradientCheck> {
    let mut seen = vec![false; model.vocab_rows()];
    for &t in tokens {
        if t == 0 || t >= seen.len() || seen[t] {
            return Err(Error::InvalidArgument(
                "gradient check needs distinct non-padding tokens".into(),
            ));
        }
        seen[t] = true;
    }
    let pass = model.trace(tokens)?;
    let (_, grad_logits) = cross_entropy(pass.probabilities(), label)?;
    let grads = model.backward(&pass, &grad_logits)?;
    let mut buffer = GradientBuffer::new(model);
    buffer.accumulate(&grads);

    let infos = model.param_infos();
    let channels = model.config().channels();
    let d = model.config().embedding_dim;
    let mut probe = model.clone();
    let mut numeric = |slot: usize, j: usize| -> Result<f64> {
        let mut at = |delta: f64| -> Result<f64> {
            probe.for_each_param_mut(|i, s| {
                if i == slot {
                    s[j] += delta;
                }
            });
            let loss = loss_of(&probe, tokens, label);
            probe.for_each_param_mut(|i, s| {
                if i == slot {
                    s[j] -= delta;
                }
            });
            loss
        };
        let (p1, m1, p2, m2) = (at(step)?, at(-step)?, at(2.0 * step)?, at(-2.0 * step)?);
        Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step))
    };

    let mut report = GradientCheck {
        max_relative_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |name: String, analytic: f64, num: f64| {
        let err = relative_error(analytic, num);
        report.checked += 1;
        if err > report.max_relative_error || report.worst.is_empty() {
            report.max_relative_error = err.max(report.max_relative_error);
            report.worst = name;
        }
    };

    // input gradient, every channel, through the looked-up embedding rows
    for (i, &tok) in tokens.iter().enumerate() {
        for c in 0..channels {
            for j in 0..d {
                let num = numeric(c, tok * d + j)?;
                record(format!("input[{i},{j},{c}]"), grads.input[(i * d + j) * channels + c], num);
            }
        }
    }
    // every other parameter
    for (slot, info) in infos.iter().enumerate().skip(channels) {
        if slot == infos.len() - 1 && !info.trainable {
            continue;
        }
        for j in 0..buffer.slots()[slot].len() {
            let num = numeric(slot, j)?;
            record(format!("{}[{j}]", info.name), buffer.slots()[slot][j], num);
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// layer statistics simulation

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub hidden_layers: usize,
    pub nodes_per_layer: usize,
    pub batch: usize,
    pub weight_std: f64,
    pub bias_init: f64,
    pub activations: Vec<ActivationKind>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 10,
            nodes_per_layer: 100,
            batch: 100,
            weight_std: 1.0,
            bias_init: 0.1,
            activations: ActivationKind::ALL.to_vec(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    /// 1-based hidden layer index.
    pub layer: usize,
    pub activation: ActivationKind,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
}

/// Feeds one `Normal(0, 1)` batch through a fully connected network with
/// `Normal(0, weight_std^2)` weights and records the mean and variance of
/// each layer's post-activation outputs. Inputs and weights are drawn once
/// and shared by every activation kind.
pub fn run_heteroscedasticity_sim(config: &SimConfig) -> Vec<LayerStats> {
    let (n, batch) = (config.nodes_per_layer, config.batch);
    let mut rng = Rng::new(config.seed);
    let input: Vec<f64> = (0..batch * n).map(|_| rng.standard_normal()).collect();
    let weights: Vec<Vec<f64>> = (0..config.hidden_layers)
        .map(|_| (0..n * n).map(|_| config.weight_std * rng.standard_normal()).collect())
        .collect();

    let mut out = Vec::with_capacity(config.hidden_layers * config.activations.len());
    for &kind in &config.activations {
        let f = Activation::new(kind);
        let mut x = input.clone();
        for (layer, w) in weights.iter().enumerate() {
            let mut next = vec![0.0; batch * n];
            for b in 0..batch {
                let row = &x[b * n..(b + 1) * n];
                for (o, out) in next[b * n..(b + 1) * n].iter_mut().enumerate() {
                    let mut s = config.bias_init;
                    for (i, &v) in row.iter().enumerate() {
                        s += v * w[i * n + o];
                    }
                    *out = f.forward(s);
                }
            }
            let count = next.len().max(1) as f64;
            // shifted by the first value so constant layers come out exact
            let shift = next.first().copied().unwrap_or(0.0);
            let offsets: Vec<f64> = next.iter().map(|v| v - shift).collect();
            let mean = shift + exact_sum(&offsets) / count;
            let squares: Vec<f64> = next.iter().map(|v| (v - mean) * (v - mean)).collect();
            let variance = exact_sum(&squares) / count;
            out.push(LayerStats {
                layer: layer + 1,
                activation: kind,
                mean,
                variance,
            });
            x = next;
        }
    }
    out
}

pub fn layer_stats_csv(stats: &[LayerStats]) -> String {
    let mut out = String::from("layer,activation,mean,variance\n");
    for s in stats {
        let _ = writeln!(out, "{},{},{},{}", s.layer, s.activation, s.mean, s.variance);
    }
    out
}

// ---------------------------------------------------------------------------
// feature-map heatmaps

/// One heatmap: rows are sampled feature maps, columns sentence positions.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapMatrix {
    /// `h{h}_conv_pre`, `h{h}_conv_post`, `h{h}_attention_k{k}` or `h{h}_gated_k{k}`.
    pub stage: String,
    pub window: usize,
    /// First-layer kernel index of each row.
    pub kernels: Vec<usize>,
    /// One label per column: the words covered by that window position.
    pub column_labels: Vec<String>,
    /// Row-major, `kernels.len() x column_labels.len()`.
    pub values: Vec<f64>,
}

impl HeatmapMatrix {
    pub fn rows(&self) -> usize {
        self.kernels.len()
    }

    pub fn cols(&self) -> usize {
        self.column_labels.len()
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Min-max scaled 8-bit pixels; a constant matrix maps to 128.
    pub fn pixels(&self) -> Vec<u8> {
        let (lo, hi) = self.value_range();
        if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
            return vec![128; self.values.len()];
        }
        self.values
            .iter()
            .map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
            .collect()
    }

    /// Binary (P5) 8-bit PGM.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.cols(), self.rows()).into_bytes();
        out.extend(self.pixels());
        out
    }

    pub fn to_csv(&self) -> String {
        let quote = |s: &str| format!("\"{}\"", s.replace('"', "\"\""));
        let mut out = String::from("kernel");
        for label in &self.column_labels {
            out.push(',');
            out.push_str(&quote(label));
        }
        out.push('\n');
        for (r, k) in self.kernels.iter().enumerate() {
            let _ = write!(out, "{k}");
            for v in &self.values[r * self.cols()..(r + 1) * self.cols()] {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapBundle {
    pub tokens: Vec<String>,
    pub matrices: Vec<HeatmapMatrix>,
}

impl HeatmapBundle {
    pub fn stage(&self, name: &str) -> Option<&HeatmapMatrix> {
        self.matrices.iter().find(|m| m.stage == name)
    }

    /// Writes `<stage>.csv` and `<stage>.pgm` for every matrix and returns the paths.
    pub fn write(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
        let mut paths = Vec::new();
        for m in &self.matrices {
            for (ext, bytes) in [("csv", m.to_csv().into_bytes()), ("pgm", m.to_pgm())] {
                let path = out_dir.join(format!("{}.{ext}", m.stage));
                fs::write(&path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
                paths.push(path);
            }
        }
        Ok(paths)
    }
}

/// Builds heatmaps of every stage for a seeded sample of `samples` first-layer
/// kernels per window size. `tokens` labels the positions of the traced sentence.
pub fn attention_heatmaps(
    model: &AgcnnModel,
    trace: &ForwardPass,
    tokens: &[String],
    samples: usize,
    seed: u64,
) -> Result<HeatmapBundle> {
    if trace.mode() != Mode::Eval {
        return Err(Error::TraceNotEval);
    }
    if tokens.len() != trace.tokens().len() {
        return Err(Error::InvalidArgument(format!(
            "{} token labels for a trace of length {}",
            tokens.len(),
            trace.tokens().len()
        )));
    }
    let t1 = model.config().kernels_per_window;
    let mut order: Vec<usize> = (0..t1).collect();
    Rng::new(seed).shuffle(&mut order);
    let mut kernels = order[..samples.min(t1)].to_vec();
    kernels.sort_unstable();

    let mut matrices = Vec::new();
    for bank in trace.banks() {
        let (h, len) = (bank.window, bank.len);
        let labels: Vec<String> = (0..len).map(|j| tokens[j..j + h].join(" ")).collect();
        let pick = |buf: &[f64]| -> Vec<f64> {
            kernels
                .iter()
                .flat_map(|&t| buf[t * len..(t + 1) * len].iter().copied())
                .collect()
        };
        let mut push = |stage: String, values: Vec<f64>| {
            matrices.push(HeatmapMatrix {
                stage,
                window: h,
                kernels: kernels.clone(),
                column_labels: labels.clone(),
                values,
            })
        };
        push(format!("h{h}_conv_pre"), pick(&bank.pre_activation));
        push(format!("h{h}_conv_post"), pick(&bank.maps));
        for g in &bank.gates {
            push(format!("h{h}_attention_k{}", g.window), pick(&g.gate));
        }
        for g in &bank.gates {
            push(format!("h{h}_gated_k{}", g.window), pick(&g.gated));
        }
    }
    Ok(HeatmapBundle {
        tokens: tokens.to_vec(),
        matrices,
    })
}

/// [`attention_heatmaps`] followed by [`HeatmapBundle::write`].
pub fn export_attention_maps(
    model: &AgcnnModel,
    trace: &ForwardPass,
    tokens: &[String],
    samples: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<HeatmapBundle> {
    let bundle = attention_heatmaps(model, trace, tokens, samples, seed)?;
    bundle.write(out_dir)?;
    Ok(bundle)
}

// ---------------------------------------------------------------------------
// activation sweep

/// Evaluation protocol of a sweep dataset.
#[derive(Debug, Clone)]
pub enum SweepData {
    /// Train, select on `val`, report accuracy on `test`.
    Split {
        train: Vec<Sample>,
        val: Vec<Sample>,
        test: Vec<Sample>,
    },
    /// Report the mean accuracy of k-fold cross-validation.
    Folds { samples: Vec<Sample>, folds: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub dataset: String,
    pub activation: ActivationKind,
    pub accuracy: f64,
    pub epochs: usize,
    pub seconds: f64,
}

/// Trains one model per activation kind from identical seeds and data order.
#[allow(clippy::too_many_arguments)]
pub fn activation_sweep(
    dataset: &str,
    data: &SweepData,
    base: &AgcnnConfig,
    vocab: &Vocabulary,
    pretrained: Option<&EmbeddingTable>,
    train_config: &TrainConfig,
    kinds: &[ActivationKind],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let start = Instant::now();
        let config = AgcnnConfig {
            activation: kind,
            ..base.clone()
        };
        let build = || build_model(&config, vocab, pretrained, &mut Rng::new(config.seed));
        let (accuracy, epochs) = match data {
            SweepData::Split { train: tr, val, test } => {
                let mut model = build()?;
                let history = train(&mut model, tr, val, train_config)?;
                (evaluate(&model, test)?, history.epochs.len())
            }
            SweepData::Folds { samples, folds } => {
                let report = cross_validate(samples, *folds, train_config, |_| build())?;
                (report.mean_accuracy, report.epochs.iter().sum())
            }
        };
        rows.push(SweepRow {
            dataset: dataset.to_string(),
            activation: kind,
            accuracy,
            epochs,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("dataset,activation,accuracy,epochs,seconds\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{:.3}", r.dataset, r.activation, r.accuracy, r.epochs, r.seconds);
    }
    out
}

/// Activation-by-dataset accuracy table (percent), one row per activation.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut kinds: Vec<ActivationKind> = Vec::new();
    for r in rows {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !kinds.contains(&r.activation) {
            kinds.push(r.activation);
        }
    }
    let mut out = format!("{:<10}", "Activation");
    for d in &datasets {
        let _ = write!(out, " {d:>8}");
    }
    out.push('\n');
    for k in kinds {
        let _ = write!(out, "{:<10}", k.name());
        for d in &datasets {
            match rows.iter().find(|r| r.activation == k && r.dataset == *d) {
                Some(r) => {
                    let _ = write!(out, " {:>8.1}", 100.0 * r.accuracy);
                }
                None => {
                    let _ = write!(out, " {:>8}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn small_sim(std: f64, seed: u64) -> Vec<LayerStats> {
        run_heteroscedasticity_sim(&SimConfig {
            weight_std: std,
            activations: vec![ActivationKind::Relu, ActivationKind::Nlrelu],
            seed,
            ..SimConfig::default()
        })
    }

    #[test]
    fn simulation_emits_one_row_per_layer_and_kind() {
        let stats = run_heteroscedasticity_sim(&SimConfig {
            hidden_layers: 4,
            nodes_per_layer: 8,
            batch: 5,
            ..SimConfig::default()
        });
        assert_eq!(stats.len(), 4 * 8);
        assert_eq!(layer_stats_csv(&stats).lines().count(), 33);
    }

    #[test]
    fn zero_weights_give_constant_layers() {
        for s in small_sim(0.0, 1) {
            assert_eq!(s.mean, Activation::new(s.activation).forward(0.1));
            assert_eq!(s.variance, 0.0);
        }
    }

    #[test]
    fn simulation_is_reproducible() {
        assert_eq!(small_sim(1.5, 3), small_sim(1.5, 3));
    }

    #[test]
    fn nlrelu_compresses_every_layer() {
        let stats = small_sim(1.5, 11);
        for layer in 1..=10 {
            let var = |k| stats.iter().find(|s| s.layer == layer && s.activation == k).unwrap().variance;
            assert!(var(ActivationKind::Nlrelu) <= var(ActivationKind::Relu), "layer {layer}");
        }
    }

    fn micro_model(activation: ActivationKind) -> (AgcnnModel, Vocabulary) {
        let config = AgcnnConfig {
            window_sizes: vec![1, 2],
            kernels_per_window: 12,
            attention_windows: vec![1, 3],
            embedding_dim: 4,
            num_classes: 2,
            variant: Variant::Rand,
            activation,
            dropout_rate: 0.5,
            seed: 3,
        };
        let vocab = Vocabulary::from_tokens((0..9).map(|i| format!("w{i}")).collect()).unwrap();
        (build_model(&config, &vocab, None, &mut Rng::new(3)).unwrap(), vocab)
    }

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("w{i}")).collect()
    }

    #[test]
    fn bundle_has_every_stage_with_aligned_labels() {
        let (model, _) = micro_model(ActivationKind::Nlrelu);
        let trace = model.trace(&[1, 2, 3, 4, 5]).unwrap();
        let bundle = attention_heatmaps(&model, &trace, &labels(5), 10, 0).unwrap();
        assert_eq!(bundle.matrices.len(), 2 * 6);
        for stage in ["conv_pre", "conv_post", "attention_k1", "attention_k3", "gated_k1", "gated_k3"] {
            let m = bundle.stage(&format!("h2_{stage}")).unwrap();
            assert_eq!(m.rows(), 10);
            assert_eq!(m.cols(), 4);
            assert_eq!(m.column_labels[3], "w3 w4");
        }
        assert_eq!(bundle.stage("h1_conv_post").unwrap().column_labels, labels(5));
        let other = attention_heatmaps(&model, &trace, &labels(5), 10, 1).unwrap();
        assert_ne!(bundle.matrices[0].kernels, other.matrices[0].kernels);
    }

    #[test]
    fn train_mode_trace_is_rejected() {
        let (model, _) = micro_model(ActivationKind::Nlrelu);
        let trace = model.forward_pass(&[1, 2, 3], Mode::Train, &mut Rng::new(1)).unwrap();
        assert!(matches!(
            attention_heatmaps(&model, &trace, &labels(3), 10, 0),
            Err(Error::TraceNotEval)
        ));
    }

    #[test]
    fn identity_gate_is_activation_of_feature_map() {
        let (mut model, _) = micro_model(ActivationKind::Nlrelu);
        let mut seen = 0;
        model.for_each_param_mut(|i, s| {
            // slots: embedding, two conv banks (weights, bias), then attention (h=1, k=1)
            if i == 5 {
                s[0] = 1.0;
                seen += 1;
            }
        });
        assert_eq!(seen, 1);
        assert_eq!(model.attention_kernel(0, 0).weights.data(), &[1.0]);
        let trace = model.trace(&[3, 3, 3, 3]).unwrap();
        let bundle = attention_heatmaps(&model, &trace, &labels(4), 10, 0).unwrap();
        let post = bundle.stage("h1_conv_post").unwrap();
        let gate = bundle.stage("h1_attention_k1").unwrap();
        for (c, g) in post.values.iter().zip(&gate.values) {
            assert_eq!(*g, crate::activation::nlrelu(*c));
        }
    }

    #[test]
    fn zero_model_heatmaps_are_constant() {
        let (mut model, _) = micro_model(ActivationKind::Relu);
        model.for_each_param_mut(|_, s| s.fill(0.0));
        let trace = model.trace(&[1, 2, 3]).unwrap();
        let bundle = attention_heatmaps(&model, &trace, &labels(3), 10, 0).unwrap();
        for m in &bundle.matrices {
            assert!(m.pixels().iter().all(|&p| p == 128));
        }
    }

    #[test]
    fn pgm_is_min_max_normalized() {
        let m = HeatmapMatrix {
            stage: "x".into(),
            window: 1,
            kernels: vec![0, 1],
            column_labels: labels(3),
            values: vec![-1.0, 0.0, 1.0, 2.0, 3.0, 0.5],
        };
        let pgm = m.to_pgm();
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        let px = &pgm[pgm.len() - 6..];
        assert_eq!(*px.iter().min().unwrap(), 0);
        assert_eq!(*px.iter().max().unwrap(), 255);
        assert_eq!(px[0], 0);
        assert_eq!(px[4], 255);
        assert!(m.to_csv().starts_with("kernel,\"w0\",\"w1\",\"w2\"\n0,-1,0,1\n"));
    }

    #[test]
    fn bundle_writes_csv_and_pgm_per_stage() {
        let (model, _) = micro_model(ActivationKind::Nlrelu);
        let trace = model.trace(&[1, 2, 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bundle = export_attention_maps(&model, &trace, &labels(3), 4, 0, dir.path()).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2 * bundle.matrices.len());
    }

    #[test]
    fn gradient_check_passes_on_smooth_activation() {
        let (model, _) = micro_model(ActivationKind::Softplus);
        let report = gradient_check(&model, &[1, 2, 3, 4], 1, 1e-4).unwrap();
        assert!(report.max_relative_error <= 1e-4, "{report:?}");
        assert!(report.checked > model.config().feature_dim());
        assert!(gradient_check(&model, &[1, 1, 2], 0, 1e-4).is_err());
    }

    #[test]
    fn sweep_table_shape() {
        let rows = vec![
            SweepRow {
                dataset: "MR".into(),
                activation: ActivationKind::Relu,
                accuracy: 0.8,
                epochs: 3,
                seconds: 1.0,
            },
            SweepRow {
                dataset: "MR".into(),
                activation: ActivationKind::Nlrelu,
                accuracy: 0.81,
                epochs: 3,
                seconds: 1.0,
            },
        ];
        let table = sweep_table(&rows);
        assert_eq!(table.lines().count(), 3);
        assert!(table.contains("nlrelu"));
        assert!(table.contains("81.0"));
        assert_eq!(sweep_csv(&rows).lines().next().unwrap(), "dataset,activation,accuracy,epochs,seconds");
    }
}
