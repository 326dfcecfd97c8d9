mod commands;
mod config;
mod error;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::config::{parse_config, RunConfig};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "agcnn", version, about = "Attention-gated CNN sentence classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Train a model and write out/model.ckpt
    Train,
    /// Accuracy of a checkpoint on a labeled file (`--test`)
    Eval,
    /// K-fold cross-validation
    Cv,
    /// Label one sentence with a checkpoint
    Predict,
    /// Dataset summary statistics
    DataStats,
    /// Convert a raw corpus into label<TAB>text files
    ConvertCorpus,
    /// Layer statistics of a deep random network per activation
    Simulate,
    /// Heatmaps of the intermediate feature maps for one sentence
    Visualize,
    /// Train one model per activation function
    Sweep,
    /// Rerun the command recorded in a manifest given with `--config`
    Replay,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Cv => "cv",
            Command::Predict => "predict",
            Command::DataStats => "data-stats",
            Command::ConvertCorpus => "convert-corpus",
            Command::Simulate => "simulate",
            Command::Visualize => "visualize",
            Command::Sweep => "sweep",
            Command::Replay => "replay",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        [
            Command::Train,
            Command::Eval,
            Command::Cv,
            Command::Predict,
            Command::DataStats,
            Command::ConvertCorpus,
            Command::Simulate,
            Command::Visualize,
            Command::Sweep,
        ]
        .into_iter()
        .find(|c| c.name() == name)
    }
}

#[derive(Args)]
struct Flags {
    /// Config file of `key = value` lines
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    variant: Option<String>,
    #[arg(long, global = true)]
    activation: Option<String>,
    /// Output directory (default `out`)
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    train: Option<String>,
    #[arg(long, global = true)]
    dev: Option<String>,
    #[arg(long, global = true)]
    test: Option<String>,
    #[arg(long, global = true)]
    embeddings: Option<String>,
    #[arg(long, global = true)]
    embeddings_format: Option<String>,
    #[arg(long, global = true)]
    checkpoint: Option<String>,
    #[arg(long, global = true)]
    sentence: Option<String>,
    #[arg(long, global = true)]
    corpus: Option<String>,
    #[arg(long, global = true)]
    source: Option<String>,
    #[arg(long, global = true)]
    folds: Option<String>,
    /// Any config key, as KEY=VALUE (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Flags {
    fn overrides(&self) -> Result<Vec<(String, String)>, CliError> {
        let named = [
            ("seed", &self.seed),
            ("variant", &self.variant),
            ("activation", &self.activation),
            ("out", &self.out),
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
            ("embeddings", &self.embeddings),
            ("embeddings_format", &self.embeddings_format),
            ("checkpoint", &self.checkpoint),
            ("sentence", &self.sentence),
            ("corpus", &self.corpus),
            ("source", &self.source),
            ("folds", &self.folds),
        ];
        let mut out: Vec<(String, String)> = named
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{item}`")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

/// Worker count from `AGCNN_THREADS`, defaulting to the available cores.
fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var("AGCNN_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("AGCNN_THREADS: expected an integer, got `{v}`"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn sha256_hex(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn write_manifest(cfg: &RunConfig, threads: usize, artifacts: &[PathBuf]) -> Result<(), CliError> {
    let mut text = String::new();
    let _ = writeln!(text, "# agcnn {} run manifest", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(text, "# prng = {}", agcnn::tensor::RNG_ALGORITHM);
    let _ = writeln!(text, "# seed = {}", cfg.model.seed);
    let _ = writeln!(text, "# threads = {threads}");
    text.push_str(&cfg.to_text());
    for path in artifacts {
        let rel = path.strip_prefix(&cfg.out).unwrap_or(path);
        let _ = writeln!(text, "# sha256 {} = {}", rel.display(), sha256_hex(path)?);
    }
    let path = cfg.out.join("manifest.cfg");
    fs::write(&path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = parse_config(cli.flags.config.as_deref(), &cli.flags.overrides()?)?;
    let command = match cli.command {
        Command::Replay => {
            if cli.flags.config.is_none() {
                return Err(CliError::Config("replay needs --config MANIFEST".into()));
            }
            let name = cfg
                .command
                .clone()
                .ok_or_else(|| CliError::Config("manifest has no `command` key".into()))?;
            Command::from_name(&name).ok_or_else(|| CliError::Config(format!("command: unknown subcommand `{name}`")))?
        }
        c => c,
    };
    cfg.command = Some(command.name().to_string());
    let threads = threads_from_env()?;
    cfg.train.threads = threads;
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(format!("creating {}", cfg.out.display()), e))?;

    let artifacts = match command {
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Cv => commands::cv(&cfg),
        Command::Predict => commands::predict(&cfg),
        Command::DataStats => commands::data_stats(&cfg),
        Command::ConvertCorpus => commands::convert(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Visualize => commands::visualize(&cfg),
        Command::Sweep => commands::sweep(&cfg),
        Command::Replay => unreachable!("resolved above"),
    }?;
    write_manifest(&cfg, threads, &artifacts)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
