//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Every key has a default, so
//! an empty file is valid. Command-line flags are applied after the file and
//! win over it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use agcnn::corpus::Corpus;
use agcnn::data::Word2VecFormat;
use agcnn::diagnostics::SimConfig;
use agcnn::training::TrainConfig;
use agcnn::{ActivationKind, AgcnnConfig};

use crate::error::CliError;

/// Where a setting came from, for error messages.
#[derive(Debug, Clone)]
pub enum Source {
    File { path: PathBuf, line: usize },
    Flag(String),
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::File { path, line } => write!(f, "{}:{line}", path.display()),
            Source::Flag(name) => write!(f, "override `{name}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Subcommand recorded by a manifest; informational.
    pub command: Option<String>,
    pub model: AgcnnConfig,
    pub train: TrainConfig,
    pub out: PathBuf,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub embeddings_format: Word2VecFormat,
    pub checkpoint: Option<PathBuf>,
    pub sentence: Option<String>,
    pub corpus: Option<Corpus>,
    pub source: Option<PathBuf>,
    pub dataset_name: Option<String>,
    pub folds: usize,
    pub activations: Vec<ActivationKind>,
    pub heatmap_samples: usize,
    pub weight_std: f64,
    pub hidden_layers: usize,
    pub nodes_per_layer: usize,
    pub sim_batch: usize,
    pub bias_init: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            command: None,
            model: AgcnnConfig::default(),
            train: TrainConfig::default(),
            out: PathBuf::from("out"),
            train_path: None,
            dev_path: None,
            test_path: None,
            embeddings: None,
            embeddings_format: Word2VecFormat::Binary,
            checkpoint: None,
            sentence: None,
            corpus: None,
            source: None,
            dataset_name: None,
            folds: 10,
            activations: ActivationKind::ALL.to_vec(),
            heatmap_samples: 10,
            weight_std: sim.weight_std,
            hidden_layers: sim.hidden_layers,
            nodes_per_layer: sim.nodes_per_layer,
            sim_batch: sim.batch,
            bias_init: sim.bias_init,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: expected {what}, got `{value}`"))
}

impl RunConfig {
    /// Applies one setting. Errors carry the key name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let path = || Some(PathBuf::from(value));
        match key {
            "command" => self.command = Some(value.to_string()),
            "seed" => {
                let seed: u64 = parse_num(key, value, "an unsigned integer")?;
                self.model.seed = seed;
                self.train.seed = seed;
            }
            "out" => self.out = PathBuf::from(value),
            "train" => self.train_path = path(),
            "dev" => self.dev_path = path(),
            "test" => self.test_path = path(),
            "embeddings" => self.embeddings = path(),
            "embeddings_format" => {
                self.embeddings_format = value.parse().map_err(|e: agcnn::Error| format!("{key}: {e}"))?
            }
            "checkpoint" => self.checkpoint = path(),
            "sentence" => self.sentence = Some(value.to_string()),
            "corpus" => self.corpus = Some(value.parse().map_err(|e: agcnn::Error| format!("{key}: {e}"))?),
            "source" => self.source = path(),
            "dataset_name" => self.dataset_name = Some(value.to_string()),
            "folds" => self.folds = parse_num(key, value, "an integer")?,
            "activations" => {
                self.activations = value
                    .split(',')
                    .map(|s| s.trim().parse::<ActivationKind>().map_err(|e| format!("{key}: {e}")))
                    .collect::<Result<_, _>>()?
            }
            "heatmap_samples" => self.heatmap_samples = parse_num(key, value, "an integer")?,
            "weight_std" => self.weight_std = parse_num(key, value, "a number")?,
            "hidden_layers" => self.hidden_layers = parse_num(key, value, "an integer")?,
            "nodes_per_layer" => self.nodes_per_layer = parse_num(key, value, "an integer")?,
            "sim_batch" => self.sim_batch = parse_num(key, value, "an integer")?,
            "bias_init" => self.bias_init = parse_num(key, value, "a number")?,
            // seed is shared with the training config and handled above
            _ if key != "num_classes" && AgcnnConfig::default().to_pairs().iter().any(|(k, _)| *k == key) => {
                self.model.set(key, value).map_err(|e| match e {
                    agcnn::Error::InvalidArgument(msg) => msg,
                    other => format!("{key}: {other}"),
                })?
            }
            _ => {
                let known = self.train.set(key, value).map_err(|e| match e {
                    agcnn::Error::InvalidArgument(msg) => msg,
                    other => other.to_string(),
                })?;
                if !known {
                    return Err(format!("unknown key `{key}`"));
                }
            }
        }
        Ok(())
    }

    /// Every setting as `key = value` lines, in a fixed order. Feeding the
    /// text back through [`parse_config`] reproduces this configuration.
    pub fn to_text(&self) -> String {
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| pairs.push((k.to_string(), v));
        if let Some(c) = &self.command {
            push("command", c.clone());
        }
        for (k, v) in self.model.to_pairs() {
            if k != "num_classes" {
                push(k, v);
            }
        }
        for (k, v) in self.train.to_pairs() {
            push(k, v);
        }
        push("out", self.out.display().to_string());
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        for (k, v) in [
            ("train", opt(&self.train_path)),
            ("dev", opt(&self.dev_path)),
            ("test", opt(&self.test_path)),
            ("embeddings", opt(&self.embeddings)),
            ("checkpoint", opt(&self.checkpoint)),
            ("source", opt(&self.source)),
            ("sentence", self.sentence.clone()),
            ("corpus", self.corpus.map(|c| c.to_string())),
            ("dataset_name", self.dataset_name.clone()),
        ] {
            if let Some(v) = v {
                push(k, v);
            }
        }
        push("embeddings_format", self.embeddings_format.to_string());
        push("folds", self.folds.to_string());
        push(
            "activations",
            self.activations.iter().map(|a| a.name()).collect::<Vec<_>>().join(","),
        );
        push("heatmap_samples", self.heatmap_samples.to_string());
        push("weight_std", self.weight_std.to_string());
        push("hidden_layers", self.hidden_layers.to_string());
        push("nodes_per_layer", self.nodes_per_layer.to_string());
        push("sim_batch", self.sim_batch.to_string());
        push("bias_init", self.bias_init.to_string());
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            hidden_layers: self.hidden_layers,
            nodes_per_layer: self.nodes_per_layer,
            batch: self.sim_batch,
            weight_std: self.weight_std,
            bias_init: self.bias_init,
            activations: self.activations.clone(),
            seed: self.model.seed,
        }
    }

    /// Returns a path setting or a "missing required" error naming the key.
    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("missing required setting `{key}`")))
    }

    fn validate(&self) -> Result<(), String> {
        self.train.validate().map_err(|e| e.to_string())?;
        let mut probe = self.model.clone();
        probe.num_classes = probe.num_classes.max(1);
        probe.validate().map_err(|e| e.to_string())?;
        if self.folds < 2 {
            return Err(format!("folds: need at least 2, got {}", self.folds));
        }
        if self.activations.is_empty() {
            return Err("activations: empty list".into());
        }
        if sentence_has_newline(self.sentence.as_deref()) {
            return Err("sentence: must be a single line".into());
        }
        Ok(())
    }
}

fn sentence_has_newline(s: Option<&str>) -> bool {
    s.is_some_and(|s| s.contains('\n'))
}

/// Parses `key = value` lines into `(key, value, line)` triples.
pub fn parse_lines(text: &str, path: &Path) -> Result<Vec<(String, String, usize)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            // a `#` inside the sentence value is kept
            Some(pos) if !raw.trim_start().starts_with("sentence") => &raw[..pos],
            _ if raw.trim_start().starts_with('#') => "",
            _ => raw,
        };
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::ConfigAt {
            at: Source::File {
                path: path.to_path_buf(),
                line: i + 1,
            },
            message: "expected `key = value`".into(),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

/// Builds a run configuration from an optional file and flag overrides
/// (applied in order, after the file).
pub fn parse_config(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::default();
    if let Some(path) = file {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (key, value, line) in parse_lines(&text, path)? {
            config.set(&key, &value).map_err(|message| CliError::ConfigAt {
                at: Source::File {
                    path: path.to_path_buf(),
                    line,
                },
                message,
            })?;
        }
    }
    for (key, value) in overrides {
        config.set(key, value).map_err(|message| CliError::ConfigAt {
            at: Source::Flag(key.clone()),
            message,
        })?;
    }
    config.validate().map_err(CliError::Config)?;
    Ok(config)
}
