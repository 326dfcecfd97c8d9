//! Mini-batch Adam training, evaluation and k-fold cross-validation.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{pad_samples, Sample};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::{argmax, AgcnnModel, GradientBuffer, Gradients};
use crate::tensor::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub early_stop_patience: usize,
    pub lr_decay_factor: f64,
    /// Epochs without improvement between learning-rate decays.
    pub lr_decay_patience: usize,
    /// Share of the training data held out for validation when no dev split exists.
    pub val_fraction: f64,
    pub seed: u64,
    /// Worker threads for per-example gradients; 0 runs everything on the calling thread.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 50,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 100,
            early_stop_patience: 10,
            lr_decay_factor: 0.5,
            lr_decay_patience: 5,
            val_fraction: 0.1,
            seed: 0,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if self.epsilon <= 0.0 {
            return bad("epsilon must be positive".into());
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!("lr_decay_factor must lie in (0, 1], got {}", self.lr_decay_factor));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }

    /// `key = value` pairs, the same keys accepted by [`TrainConfig::set`].
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("early_stop_patience", self.early_stop_patience.to_string()),
            ("lr_decay_factor", self.lr_decay_factor.to_string()),
            ("lr_decay_patience", self.lr_decay_patience.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
        ]
    }

    /// Sets one key; `Ok(false)` if the key is not a training key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{key}: expected {what}, got `{value}`")))
        }
        match key {
            "batch_size" => self.batch_size = parse(key, value, "an integer")?,
            "learning_rate" => self.learning_rate = parse(key, value, "a number")?,
            "beta1" => self.beta1 = parse(key, value, "a number")?,
            "beta2" => self.beta2 = parse(key, value, "a number")?,
            "epsilon" => self.epsilon = parse(key, value, "a number")?,
            "max_epochs" => self.max_epochs = parse(key, value, "an integer")?,
            "early_stop_patience" => self.early_stop_patience = parse(key, value, "an integer")?,
            "lr_decay_factor" => self.lr_decay_factor = parse(key, value, "a number")?,
            "lr_decay_patience" => self.lr_decay_patience = parse(key, value, "an integer")?,
            "val_fraction" => self.val_fraction = parse(key, value, "a number")?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Loss `-ln p[label]` and its gradient w.r.t. the logits, `p - onehot(label)`.
pub fn cross_entropy(probabilities: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= probabilities.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: probabilities.len(),
        });
    }
    let loss = -probabilities[label].max(f64::MIN_POSITIVE).ln();
    let mut grad = probabilities.to_vec();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// First and second moment estimates for a list of parameter slices.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(lens: impl IntoIterator<Item = usize>, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let m: Vec<Vec<f64>> = lens.into_iter().map(|n| vec![0.0; n]).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn with_defaults(lens: impl IntoIterator<Item = usize>) -> Self {
        let c = TrainConfig::default();
        Self::new(lens, c.beta1, c.beta2, c.epsilon)
    }
}

/// One bias-corrected Adam update of every slice. Nothing is modified when
/// any gradient is non-finite.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameter slices, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::ShapeMismatch {
                left: vec![p.len()],
                right: vec![g.len()],
            });
        }
        if !g.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("parameter {i}")));
        }
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Applies an averaged batch gradient to the trainable parameters of `model`.
fn apply_gradients(model: &mut AgcnnModel, buffer: &GradientBuffer, state: &mut AdamState, lr: f64) -> Result<()> {
    let infos = model.param_infos();
    for (info, slot) in infos.iter().zip(buffer.slots()) {
        if info.trainable && !slot.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteGradient(info.name.clone()));
        }
    }
    let trainable = buffer.trainable();
    let grads: Vec<&[f64]> = buffer
        .slots()
        .iter()
        .zip(trainable)
        .filter(|(_, &t)| t)
        .map(|(s, _)| s.as_slice())
        .collect();
    model.with_params_mut(|slices| {
        let mut params: Vec<&mut [f64]> = slices
            .iter_mut()
            .zip(trainable)
            .filter(|(_, &t)| t)
            .map(|(s, _)| &mut **s)
            .collect();
        adam_step(&mut params, &grads, state, lr)
    })
}

fn adam_for(model: &AgcnnModel, config: &TrainConfig) -> AdamState {
    let lens = model
        .param_infos()
        .into_iter()
        .filter(|i| i.trainable)
        .map(|i| i.shape.iter().product());
    AdamState::new(lens, config.beta1, config.beta2, config.epsilon)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Running accuracy of the training-mode forward passes of this epoch.
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_acc,lr,seconds\n");
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.3}",
                r.epoch, r.train_loss, r.train_acc, r.val_acc, r.lr, r.seconds
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

fn check_samples(model: &AgcnnModel, samples: &[Sample], what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset(what.to_string()));
    }
    let classes = model.config().num_classes;
    if let Some(s) = samples.iter().find(|s| s.label >= classes) {
        return Err(Error::LabelOutOfRange { label: s.label, classes });
    }
    Ok(())
}

struct ExampleResult {
    loss: f64,
    correct: bool,
    grads: Gradients,
}

fn example_step(model: &AgcnnModel, tokens: &[usize], label: usize, mut rng: Rng) -> Result<ExampleResult> {
    let pass = model.forward_pass(tokens, Mode::Train, &mut rng)?;
    let (loss, grad_logits) = cross_entropy(pass.probabilities(), label)?;
    let correct = argmax(pass.probabilities()) == label;
    let grads = model.backward(&pass, &grad_logits)?;
    Ok(ExampleResult { loss, correct, grads })
}

fn build_pool(threads: usize) -> Result<Option<rayon::ThreadPool>> {
    if threads == 0 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::InvalidArgument(format!("cannot start {threads} worker threads: {e}")))
}

/// Runs `f` over `0..n` and returns results in index order, in parallel when a pool is given.
fn ordered_map<T: Send>(
    pool: Option<&rayon::ThreadPool>,
    n: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    match pool {
        None => (0..n).map(f).collect(),
        Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
    }
}

/// Trains `model` in place and leaves it holding the parameters of the epoch
/// with the best validation accuracy (earliest on ties).
pub fn train(model: &mut AgcnnModel, train_set: &[Sample], val_set: &[Sample], config: &TrainConfig) -> Result<TrainHistory> {
    train_with_progress(model, train_set, val_set, config, |_| {})
}

pub fn train_with_progress(
    model: &mut AgcnnModel,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    config.validate()?;
    check_samples(model, train_set, "training set")?;
    check_samples(model, val_set, "validation set")?;
    let pool = build_pool(config.threads)?;
    let min_len = model.config().min_sentence_len();
    let root = Rng::new(config.seed);
    let mut shuffle_rng = root.clone();
    let mut adam = adam_for(model, config);
    let mut buffer = GradientBuffer::new(model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut lr = config.learning_rate;
    let mut history = TrainHistory {
        best_val_acc: f64::NEG_INFINITY,
        ..TrainHistory::default()
    };
    let mut best = model.clone();
    let mut since_improvement = 0;
    let mut stream = 0u64;

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = pad_samples(&samples, min_len);
            let first_stream = stream + 1;
            stream += batch.len() as u64;
            let frozen: &AgcnnModel = model;
            let results = ordered_map(pool.as_ref(), batch.len(), |i| {
                example_step(frozen, batch.row(i), batch.labels[i], root.derive(first_stream + i as u64))
            })?;
            buffer.clear();
            for r in &results {
                loss_sum += r.loss;
                correct += usize::from(r.correct);
                buffer.accumulate(&r.grads);
            }
            buffer.scale(1.0 / batch.len() as f64);
            apply_gradients(model, &buffer, &mut adam, lr)?;
        }

        let val_acc = evaluate_with(model, val_set, pool.as_ref())?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_acc,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.epochs.push(record);

        if val_acc > history.best_val_acc {
            history.best_val_acc = val_acc;
            history.best_epoch = epoch;
            best = model.clone();
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= config.early_stop_patience {
                break;
            }
            if config.lr_decay_patience > 0 && since_improvement % config.lr_decay_patience == 0 {
                lr *= config.lr_decay_factor;
            }
        }
    }
    if history.best_epoch > 0 {
        *model = best;
    }
    Ok(history)
}

/// Fraction of samples whose eval-mode prediction matches the label.
pub fn evaluate(model: &AgcnnModel, samples: &[Sample]) -> Result<f64> {
    evaluate_with(model, samples, None)
}

/// [`evaluate`] spread over `threads` workers (0 = calling thread only).
pub fn evaluate_parallel(model: &AgcnnModel, samples: &[Sample], threads: usize) -> Result<f64> {
    evaluate_with(model, samples, build_pool(threads)?.as_ref())
}

fn evaluate_with(model: &AgcnnModel, samples: &[Sample], pool: Option<&rayon::ThreadPool>) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("evaluation set".into()));
    }
    let hits = ordered_map(pool, samples.len(), |i| {
        Ok(model.predict(&samples[i].tokens)? == samples[i].label)
    })?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / samples.len() as f64)
}

/// Seeded split of `samples` into `(train, validation)` with
/// `round(fraction * n)` validation examples, at least one of each.
pub fn holdout_split(samples: &[Sample], fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if samples.len() < 2 {
        return Err(Error::EmptyDataset(format!(
            "{} examples cannot be split into training and validation",
            samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    Rng::new(seed).shuffle(&mut order);
    let n_val = ((fraction * samples.len() as f64).round() as usize).clamp(1, samples.len() - 1);
    let val = order[..n_val].iter().map(|&i| samples[i].clone()).collect();
    let train = order[n_val..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, val))
}

/// Seeded shuffle of `0..n` cut into `folds` disjoint parts whose sizes
/// differ by at most one (the first `n % folds` parts are larger).
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    if folds > n {
        return Err(Error::InvalidArgument(format!("{folds} folds for {n} examples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub epochs: Vec<usize>,
    pub seconds: Vec<f64>,
}

/// K-fold cross-validation. `build(fold)` supplies a fresh model per fold;
/// each training portion gives up `val_fraction` of its examples for model
/// selection.
pub fn cross_validate(
    samples: &[Sample],
    folds: usize,
    config: &TrainConfig,
    mut build: impl FnMut(usize) -> Result<AgcnnModel>,
) -> Result<FoldReport> {
    config.validate()?;
    let parts = fold_partition(samples.len(), folds, config.seed)?;
    let mut report = FoldReport {
        accuracies: Vec::with_capacity(folds),
        mean_accuracy: 0.0,
        epochs: Vec::with_capacity(folds),
        seconds: Vec::with_capacity(folds),
    };
    for (fold, test_idx) in parts.iter().enumerate() {
        let start = Instant::now();
        let mut in_test = vec![false; samples.len()];
        test_idx.iter().for_each(|&i| in_test[i] = true);
        let rest: Vec<Sample> = (0..samples.len())
            .filter(|&i| !in_test[i])
            .map(|i| samples[i].clone())
            .collect();
        let test: Vec<Sample> = test_idx.iter().map(|&i| samples[i].clone()).collect();
        let fold_seed = config.seed.wrapping_add(fold as u64 + 1);
        let (train_part, val_part) = holdout_split(&rest, config.val_fraction, fold_seed)?;
        let mut model = build(fold)?;
        let fold_config = TrainConfig {
            seed: fold_seed,
            ..config.clone()
        };
        let history = train(&mut model, &train_part, &val_part, &fold_config)?;
        report.accuracies.push(evaluate_parallel(&model, &test, config.threads)?);
        report.epochs.push(history.epochs.len());
        report.seconds.push(start.elapsed().as_secs_f64());
    }
    report.mean_accuracy = report.accuracies.iter().sum::<f64>() / folds as f64;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationKind;
    use crate::data::Vocabulary;
    use crate::layers::softmax;
    use crate::model::{build_model, AgcnnConfig, Variant};
    use proptest::prelude::*;
    use crate::tensor::Rng;

    #[test]
    fn cross_entropy_values() {
        let (loss, grad) = cross_entropy(&[0.5, 0.5], 0).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(grad, vec![-0.5, 0.5]);
        let (loss, _) = cross_entropy(&[1.0 - 1e-15, 1e-15], 0).unwrap();
        assert!(loss < 1e-14);
        assert!(matches!(cross_entropy(&[0.5, 0.5], 2), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let logits: Vec<f64> = (0..4).map(|_| rng.normal(0.0, 2.0)).collect();
            let label = (rng.next_u64() % 4) as usize;
            let (_, grad) = cross_entropy(&softmax(&logits), label).unwrap();
            let loss_at = |j: usize, delta: f64| {
                let mut z = logits.clone();
                z[j] += delta;
                cross_entropy(&softmax(&z), label).unwrap().0
            };
            for j in 0..4 {
                // fourth-order central stencil
                let h = 1e-3;
                let fd = (8.0 * (loss_at(j, h) - loss_at(j, -h)) - (loss_at(j, 2.0 * h) - loss_at(j, -2.0 * h)))
                    / (12.0 * h);
                let rel = (fd - grad[j]).abs() / fd.abs().max(grad[j].abs()).max(1e-6);
                assert!(rel <= 1e-8, "{fd} vs {}", grad[j]);
            }
        }
    }

    #[test]
    fn first_adam_step_is_about_lr() {
        let mut p = [0.0];
        let mut state = AdamState::with_defaults([1]);
        adam_step(&mut [&mut p[..]], &[&[1.0][..]], &mut state, 1e-3).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-10);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = [0.3, -2.0];
        let mut state = AdamState::with_defaults([2]);
        for _ in 0..10 {
            adam_step(&mut [&mut p[..]], &[&[0.0, 0.0][..]], &mut state, 1e-3).unwrap();
        }
        assert_eq!(p, [0.3, -2.0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut p = [1.0, 1.0];
        let mut q = [1.0];
        let mut state = AdamState::with_defaults([2, 1]);
        let err = adam_step(&mut [&mut p[..], &mut q[..]], &[&[0.1, 0.1][..], &[f64::NAN][..]], &mut state, 1e-3);
        assert!(matches!(err, Err(Error::NonFiniteGradient(ref n)) if n == "parameter 1"));
        assert_eq!(p, [1.0, 1.0]);
        assert_eq!(state.t, 0);
    }

    proptest! {
        #[test]
        fn first_step_is_scale_invariant(g in prop::collection::vec(1.0f64..100.0, 1..8), sign in prop::bool::ANY) {
            let g: Vec<f64> = g.iter().map(|x| if sign { -x } else { *x }).collect();
            let g2: Vec<f64> = g.iter().map(|x| 2.0 * x).collect();
            let mut a = vec![0.5; g.len()];
            let mut b = a.clone();
            adam_step(&mut [&mut a[..]], &[&g[..]], &mut AdamState::with_defaults([g.len()]), 1e-3).unwrap();
            adam_step(&mut [&mut b[..]], &[&g2[..]], &mut AdamState::with_defaults([g.len()]), 1e-3).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn folds_partition_indices(n in 2usize..200, folds in 2usize..12, seed in 0u64..1000) {
            prop_assume!(folds <= n);
            let parts = fold_partition(n, folds, seed).unwrap();
            let mut seen = vec![0; n];
            for p in &parts {
                for &i in p {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn leave_one_out_boundary() {
        let parts = fold_partition(10, 10, 3).unwrap();
        assert!(parts.iter().all(|p| p.len() == 1));
        assert!(fold_partition(3, 4, 0).is_err());
        assert!(fold_partition(3, 1, 0).is_err());
    }

    fn toy_setup(seed: u64) -> (AgcnnModel, Vec<Sample>) {
        let config = AgcnnConfig {
            window_sizes: vec![2, 3],
            kernels_per_window: 4,
            attention_windows: vec![1, 3],
            embedding_dim: 6,
            num_classes: 2,
            variant: Variant::Rand,
            activation: ActivationKind::Nlrelu,
            dropout_rate: 0.5,
            seed,
        };
        let vocab = Vocabulary::from_tokens((0..20).map(|i| format!("w{i}")).collect()).unwrap();
        let model = build_model(&config, &vocab, None, &mut Rng::new(seed)).unwrap();
        let mut rng = Rng::new(seed + 1);
        let samples = (0..12)
            .map(|i| Sample {
                tokens: (0..3 + i % 4).map(|_| 1 + (rng.next_u64() % 20) as usize).collect(),
                label: i % 2,
            })
            .collect();
        (model, samples)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            batch_size: 5,
            max_epochs: 4,
            learning_rate: 0.01,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_freezes_everything() {
        let (mut model, samples) = toy_setup(1);
        let before = model.clone();
        let config = TrainConfig {
            learning_rate: 0.0,
            ..small_config()
        };
        let history = train(&mut model, &samples, &samples, &config).unwrap();
        assert_eq!(model, before);
        assert!(history.epochs.windows(2).all(|w| w[0].val_acc == w[1].val_acc));
    }

    #[test]
    fn training_is_deterministic_and_thread_independent() {
        let (model, samples) = toy_setup(2);
        let run = |threads| {
            let mut m = model.clone();
            let config = TrainConfig {
                threads,
                ..small_config()
            };
            let h = train(&mut m, &samples, &samples, &config).unwrap();
            (m, h.epochs.iter().map(|e| e.train_loss).collect::<Vec<_>>())
        };
        let (a, la) = run(0);
        let (b, lb) = run(0);
        let (c, lc) = run(3);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(a, c);
        assert_eq!(la, lc);
    }

    #[test]
    fn one_step_trains_the_attention_path() {
        let (mut model, samples) = toy_setup(3);
        let before = model.clone();
        let config = TrainConfig {
            max_epochs: 1,
            batch_size: 12,
            ..TrainConfig::default()
        };
        train(&mut model, &samples, &samples, &config).unwrap();
        let changed = (0..2).any(|hi| {
            (0..2).any(|ki| model.attention_kernel(hi, ki).weights != before.attention_kernel(hi, ki).weights)
        });
        assert!(changed);
    }

    #[test]
    fn empty_and_mislabelled_sets_are_rejected() {
        let (mut model, samples) = toy_setup(4);
        assert!(matches!(
            train(&mut model, &[], &samples, &small_config()),
            Err(Error::EmptyDataset(_))
        ));
        let bad = vec![Sample {
            tokens: vec![1, 2, 3],
            label: 5,
        }];
        assert!(matches!(
            train(&mut model, &bad, &samples, &small_config()),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn accuracy_matches_hand_count() {
        let (model, samples) = toy_setup(5);
        let samples = &samples[..10];
        let predictions: Vec<usize> = samples.iter().map(|s| model.predict(&s.tokens).unwrap()).collect();
        let mut confusion = [[0usize; 2]; 2];
        for (s, &p) in samples.iter().zip(&predictions) {
            confusion[s.label][p] += 1;
        }
        let trace = (confusion[0][0] + confusion[1][1]) as f64 / 10.0;
        let acc = evaluate(&model, samples).unwrap();
        assert_eq!(acc, trace);

        let flipped: Vec<Sample> = samples
            .iter()
            .map(|s| Sample {
                tokens: s.tokens.clone(),
                label: 1 - s.label,
            })
            .collect();
        assert!((evaluate(&model, &flipped).unwrap() - (1.0 - acc)).abs() < 1e-15);
        let truth: Vec<Sample> = samples
            .iter()
            .zip(&predictions)
            .map(|(s, &p)| Sample {
                tokens: s.tokens.clone(),
                label: p,
            })
            .collect();
        assert_eq!(evaluate_parallel(&model, &truth, 2).unwrap(), 1.0);
    }

    #[test]
    fn cross_validation_reports_mean_of_folds() {
        let (model, samples) = toy_setup(6);
        let config = TrainConfig {
            max_epochs: 2,
            ..small_config()
        };
        let report = cross_validate(&samples, 3, &config, |_| Ok(model.clone())).unwrap();
        assert_eq!(report.accuracies.len(), 3);
        let mean = report.accuracies.iter().sum::<f64>() / 3.0;
        assert!((report.mean_accuracy - mean).abs() <= 1e-12);
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let (mut model, samples) = toy_setup(7);
        let history = train(&mut model, &samples, &samples, &small_config()).unwrap();
        let csv = history.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,train_acc,val_acc,lr,seconds");
        assert_eq!(lines.len(), history.epochs.len() + 1);
        assert!(history.best_epoch >= 1);
    }

    #[test]
    fn config_keys_round_trip() {
        let mut config = TrainConfig::default();
        let source = TrainConfig {
            batch_size: 7,
            learning_rate: 0.02,
            ..TrainConfig::default()
        };
        for (k, v) in source.to_pairs() {
            assert!(config.set(k, &v).unwrap());
        }
        assert_eq!(config.batch_size, 7);
        assert_eq!(config.learning_rate, 0.02);
        assert!(!config.set("window_sizes", "1").unwrap());
        assert!(config.set("batch_size", "fifty").is_err());
    }
}
