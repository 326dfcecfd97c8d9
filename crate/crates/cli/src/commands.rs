use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use agcnn::checkpoint::Checkpoint;
use agcnn::corpus::convert_corpus;
use agcnn::data::{clean_text, load_dataset, load_word2vec, pad_sentence, DatasetStats, Sample, PAD_TOKEN};
use agcnn::diagnostics::{
    activation_sweep, attention_heatmaps, layer_stats_csv, run_heteroscedasticity_sim, sweep_csv, sweep_table,
    SweepData,
};
use agcnn::model::argmax;
use agcnn::training::{cross_validate, evaluate_parallel, holdout_split, train_with_progress};
use agcnn::{build_model, load_checkpoint, save_checkpoint, AgcnnConfig, Dataset, EmbeddingTable, Rng, Vocabulary};

use crate::config::RunConfig;
use crate::error::CliError;

pub type CmdResult = Result<Vec<PathBuf>, CliError>;

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    Ok(path.to_path_buf())
}

fn load_data(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let train = cfg.require(&cfg.train_path, "train")?;
    Ok(load_dataset(train, cfg.dev_path.as_deref(), cfg.test_path.as_deref())?)
}

/// Pretrained vectors for variants that use them. With `required` unset a
/// missing embeddings path falls back to random initialization.
fn pretrained(cfg: &RunConfig, vocab: &Vocabulary, required: bool) -> Result<Option<EmbeddingTable>, CliError> {
    if !cfg.model.variant.uses_pretrained() {
        return Ok(None);
    }
    match &cfg.embeddings {
        Some(path) => Ok(Some(load_word2vec(path, cfg.embeddings_format, vocab)?)),
        None if required => Err(CliError::Config(format!(
            "missing required setting `embeddings` for variant {}",
            cfg.model.variant.name()
        ))),
        None => {
            eprintln!("warning: no embeddings given; {} falls back to random vectors", cfg.model.variant.name());
            Ok(None)
        }
    }
}

fn model_config(cfg: &RunConfig, dataset: &Dataset) -> AgcnnConfig {
    AgcnnConfig {
        num_classes: dataset.num_classes(),
        ..cfg.model.clone()
    }
}

fn print_epoch(r: &agcnn::training::EpochRecord) {
    eprintln!(
        "epoch {:>3}  loss {:.4}  train {:.4}  val {:.4}  lr {:.2e}  {:.1}s",
        r.epoch, r.train_loss, r.train_acc, r.val_acc, r.lr, r.seconds
    );
}

pub fn train(cfg: &RunConfig) -> CmdResult {
    let data = load_data(cfg)?;
    let vocab = Vocabulary::build(&data);
    let table = pretrained(cfg, &vocab, true)?;
    let config = model_config(cfg, &data);
    let mut model = build_model(&config, &vocab, table.as_ref(), &mut Rng::new(config.seed))?;

    let train_set = vocab.encode_examples(&data.train);
    let (train_set, val_set) = if data.dev.is_empty() {
        holdout_split(&train_set, cfg.train.val_fraction, cfg.train.seed)?
    } else {
        (train_set, vocab.encode_examples(&data.dev))
    };
    let history = train_with_progress(&mut model, &train_set, &val_set, &cfg.train, print_epoch)?;
    println!("best_epoch={} val_accuracy={:.6}", history.best_epoch, history.best_val_acc);
    if !data.test.is_empty() {
        let acc = evaluate_parallel(&model, &vocab.encode_examples(&data.test), cfg.train.threads)?;
        println!("test_accuracy={acc:.6}");
    }

    let ckpt_path = cfg.out.join("model.ckpt");
    save_checkpoint(
        &Checkpoint {
            model,
            vocab,
            label_names: data.label_names,
        },
        &ckpt_path,
    )?;
    let history_path = cfg.out.join("history.csv");
    history.write_csv(&history_path)?;
    Ok(vec![ckpt_path, history_path])
}

fn load_ckpt(cfg: &RunConfig) -> Result<Checkpoint, CliError> {
    Ok(load_checkpoint(cfg.require(&cfg.checkpoint, "checkpoint")?)?)
}

pub fn eval(cfg: &RunConfig) -> CmdResult {
    let ckpt = load_ckpt(cfg)?;
    let path = cfg.require(&cfg.test_path, "test")?;
    let data = load_dataset(path, None, None)?;
    // labels are numbered per file; map them onto the checkpoint's names
    let mut samples = Vec::with_capacity(data.train.len());
    for e in &data.train {
        let name = &data.label_names[e.label];
        let label = ckpt
            .label_names
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| CliError::Config(format!("label `{name}` in {} is unknown to the checkpoint", path.display())))?;
        samples.push(Sample {
            tokens: ckpt.vocab.encode(&e.tokens),
            label,
        });
    }
    let acc = evaluate_parallel(&ckpt.model, &samples, cfg.train.threads)?;
    println!("accuracy={acc:.6} examples={}", samples.len());
    let out = cfg.out.join("eval.txt");
    Ok(vec![write_file(&out, format!("accuracy = {acc}\nexamples = {}\n", samples.len()))?])
}

pub fn cv(cfg: &RunConfig) -> CmdResult {
    let data = load_data(cfg)?;
    let vocab = Vocabulary::build(&data);
    let table = pretrained(cfg, &vocab, true)?;
    let config = model_config(cfg, &data);
    let all: Vec<_> = data.examples().cloned().collect();
    let samples = vocab.encode_examples(&all);
    let base = Rng::new(config.seed);
    let report = cross_validate(&samples, cfg.folds, &cfg.train, |fold| {
        let model = build_model(&config, &vocab, table.as_ref(), &mut base.derive(fold as u64))?;
        eprintln!("fold {}/{}", fold + 1, cfg.folds);
        Ok(model)
    })?;
    let mut csv = String::from("fold,accuracy,epochs,seconds\n");
    for (i, acc) in report.accuracies.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{},{:.3}", i + 1, acc, report.epochs[i], report.seconds[i]);
        println!("fold {} accuracy={acc:.6}", i + 1);
    }
    println!("mean_accuracy={:.6}", report.mean_accuracy);
    Ok(vec![write_file(&cfg.out.join("folds.csv"), csv)?])
}

fn sentence(cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    let text = cfg
        .sentence
        .as_deref()
        .ok_or_else(|| CliError::Config("missing required setting `sentence`".into()))?;
    Ok(clean_text(text))
}

pub fn predict(cfg: &RunConfig) -> CmdResult {
    let ckpt = load_ckpt(cfg)?;
    let tokens = sentence(cfg)?;
    let ids = pad_sentence(&ckpt.vocab.encode(&tokens), ckpt.model.config().min_sentence_len());
    let pass = ckpt.model.trace(&ids)?;
    let probs = pass.probabilities();
    let label = &ckpt.label_names[argmax(probs)];
    println!("{label}");
    let mut text = format!("label = {label}\n");
    for (name, p) in ckpt.label_names.iter().zip(probs) {
        let _ = writeln!(text, "p[{name}] = {p}");
    }
    Ok(vec![write_file(&cfg.out.join("prediction.txt"), text)?])
}

pub fn data_stats(cfg: &RunConfig) -> CmdResult {
    let data = load_data(cfg)?;
    let vocab = Vocabulary::build(&data);
    let table = match &cfg.embeddings {
        Some(path) => Some(load_word2vec(path, cfg.embeddings_format, &vocab)?),
        None => None,
    };
    let s = DatasetStats::compute(&data, &vocab, table.as_ref());
    let opt = |v: Option<usize>, none: &str| v.map_or(none.to_string(), |v| v.to_string());
    let text = format!(
        "c = {}\nl = {:.1}\nN = {}\nV = {}\nV_pre = {}\nT = {}\nempty = {}\n",
        s.classes,
        s.average_length,
        s.size,
        s.vocabulary,
        opt(s.pretrained_coverage, "-"),
        opt(s.test_size, "CV"),
        s.empty_sentences
    );
    print!("{text}");
    Ok(vec![write_file(&cfg.out.join("stats.txt"), text)?])
}

pub fn convert(cfg: &RunConfig) -> CmdResult {
    let corpus = cfg
        .corpus
        .ok_or_else(|| CliError::Config("missing required setting `corpus`".into()))?;
    let source = cfg.require(&cfg.source, "source")?;
    let files = convert_corpus(corpus, source, &cfg.out)?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(files)
}

pub fn simulate(cfg: &RunConfig) -> CmdResult {
    let stats = run_heteroscedasticity_sim(&cfg.sim_config());
    for kind in &cfg.activations {
        let rows: Vec<_> = stats.iter().filter(|s| s.activation == *kind).collect();
        if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
            println!(
                "{:<9} layer1 var {:.4e}  layer{} var {:.4e}",
                kind.name(),
                first.variance,
                last.layer,
                last.variance
            );
        }
    }
    Ok(vec![write_file(&cfg.out.join("layer_stats.csv"), layer_stats_csv(&stats))?])
}

pub fn visualize(cfg: &RunConfig) -> CmdResult {
    let ckpt = load_ckpt(cfg)?;
    let mut tokens = sentence(cfg)?;
    let min_len = ckpt.model.config().min_sentence_len();
    while tokens.len() < min_len {
        tokens.push(PAD_TOKEN.to_string());
    }
    let ids = ckpt.vocab.encode(&tokens);
    let pass = ckpt.model.trace(&ids)?;
    println!("prediction={}", ckpt.label_names[argmax(pass.probabilities())]);
    let bundle = attention_heatmaps(&ckpt.model, &pass, &tokens, cfg.heatmap_samples, cfg.model.seed)?;
    for m in &bundle.matrices {
        println!("{} {}x{}", m.stage, m.rows(), m.cols());
    }
    Ok(bundle.write(&cfg.out.join("heatmaps"))?)
}

pub fn sweep(cfg: &RunConfig) -> CmdResult {
    let data = load_data(cfg)?;
    let vocab = Vocabulary::build(&data);
    let table = pretrained(cfg, &vocab, false)?;
    let config = model_config(cfg, &data);
    let name = cfg.dataset_name.clone().unwrap_or_else(|| dataset_name(cfg));
    let sweep_data = if data.test.is_empty() {
        let all: Vec<_> = data.examples().cloned().collect();
        SweepData::Folds {
            samples: vocab.encode_examples(&all),
            folds: cfg.folds,
        }
    } else {
        let train_set = vocab.encode_examples(&data.train);
        let (train, val) = if data.dev.is_empty() {
            holdout_split(&train_set, cfg.train.val_fraction, cfg.train.seed)?
        } else {
            (train_set, vocab.encode_examples(&data.dev))
        };
        SweepData::Split {
            train,
            val,
            test: vocab.encode_examples(&data.test),
        }
    };
    let rows = activation_sweep(&name, &sweep_data, &config, &vocab, table.as_ref(), &cfg.train, &cfg.activations)?;
    print!("{}", sweep_table(&rows));
    Ok(vec![write_file(&cfg.out.join("sweep.csv"), sweep_csv(&rows))?])
}

/// Names a dataset after its directory, or the file stem for a bare file.
fn dataset_name(cfg: &RunConfig) -> String {
    let path = cfg.train_path.as_deref().unwrap_or(Path::new("dataset"));
    path.parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
}
