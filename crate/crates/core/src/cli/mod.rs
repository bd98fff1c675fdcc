//! Command-line front end. [`dispatch`] parses arguments, merges an optional
//! `key = value` config file underneath them, runs one subcommand and returns the
//! process exit code: 0 success, 1 usage or configuration, 2 data, 3 remote.

mod commands;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::corpus::Metric;
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::optim::LrSchedule;
use crate::pool::{LossKind, Pooling};

#[derive(Debug, Parser)]
#[command(name = "triderm", version, about = "Triplet-judgment embeddings, self-supervised pooling heads, distance fusion and agreement metrics")]
pub struct Cli {
    /// Key-value config file (`key = value` per line, keys are long flag names).
    /// Flags given on the command line take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-structure corpus: latents, view pairs, triplets, descriptions
    Synth(SynthArgs),
    /// Ask a chat-completion model for triplet judgments over case descriptions
    Oracle(OracleArgs),
    /// Soft ordinal embedding
    #[command(subcommand)]
    Soe(SoeCommand),
    /// Attention-pooling head
    #[command(subcommand)]
    Pool(PoolCommand),
    /// Embed images with a trained head (mean of wound embeddings)
    Embed(EmbedArgs),
    /// Pairwise distance matrix of an embedding
    Distances(DistancesArgs),
    /// Fuse a vision and a text distance matrix
    Fuse(FuseArgs),
    /// Score an embedding or distance matrix against triplet judgments
    Metrics(MetricsArgs),
    /// Nearest (or farthest) items to a query item
    Neighbors(NeighborsArgs),
    /// Run the annotation service
    Serve(ServeArgs),
    /// Sweep SOE embedding dimension and triplet budget on planted data
    Ablate(AblateArgs),
}

#[derive(Debug, Subcommand)]
pub enum SoeCommand {
    /// Fit coordinates to triplet judgments
    Fit(SoeFitArgs),
}

#[derive(Debug, Subcommand)]
pub enum PoolCommand {
    /// Train the head on paired-view feature maps
    Train(PoolTrainArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (created if missing)
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub n_items: usize,
    #[arg(long, default_value_t = 4)]
    pub latent_dim: usize,
    /// Feature noise per view and distance noise per judgment
    #[arg(long, default_value_t = 0.0)]
    pub noise_sd: f64,
    /// Fraction of the triplet universe to label (0 writes no triplets)
    #[arg(long, default_value_t = 1.0)]
    pub triplet_fraction: f64,
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    #[arg(long, default_value_t = 6)]
    pub height: usize,
    #[arg(long, default_value_t = 6)]
    pub width: usize,
    #[arg(long, default_value_t = 2)]
    pub wounds_per_item: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Case descriptions, JSONL with `id` and `text`
    #[arg(long, value_name = "FILE")]
    pub descriptions: PathBuf,
    /// Output triplet JSONL
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Chat-completions URL
    #[arg(long, default_value = "http://127.0.0.1:8000/v1/chat/completions")]
    pub endpoint: String,
    #[arg(long, default_value = "gpt-oss-120b")]
    pub model: String,
    /// File holding the system persona; a built-in placeholder is used otherwise
    #[arg(long, value_name = "FILE")]
    pub persona_file: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub max_parallel: usize,
    /// Retries after transport errors or HTTP 429/5xx
    #[arg(long, default_value_t = 3)]
    pub retry_limit: usize,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    /// Fraction of the triplet space to query, in (0, 1]
    #[arg(long, default_value_t = 1.0)]
    pub budget: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Response cache directory (reruns reuse it instead of the network)
    #[arg(long, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
    /// Answer with the built-in mock model that reads planted coordinates from the text
    #[arg(long)]
    pub mock: bool,
}

#[derive(Debug, Args)]
pub struct SoeFitArgs {
    /// Triplet judgments (JSONL)
    #[arg(long, value_name = "FILE")]
    pub triplets: PathBuf,
    /// Item ids, one per line; defines the embedding row order
    #[arg(long, value_name = "FILE")]
    pub items: PathBuf,
    /// Output embedding CSV
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    /// Hinge margin delta
    #[arg(long, default_value_t = 0.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 2048)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub amsgrad: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub anchor_balanced: bool,
    #[arg(long, default_value_t = 0.1)]
    pub init_sd: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of judgments per anchor held out and scored after fitting
    #[arg(long, default_value_t = 0.0)]
    pub holdout: f64,
}

#[derive(Debug, Args)]
pub struct PoolTrainArgs {
    /// Paired-view feature file
    #[arg(long, value_name = "FILE")]
    pub views: PathBuf,
    /// Output head parameters
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Optional per-epoch loss CSV
    #[arg(long, value_name = "FILE")]
    pub loss_history: Option<PathBuf>,
    #[arg(long, default_value = "vicreg", value_parser = parse_loss)]
    pub loss: LossKind,
    /// Invariance weight
    #[arg(long, default_value_t = 25.0)]
    pub lambda: f64,
    /// Variance weight
    #[arg(long, default_value_t = 25.0)]
    pub mu: f64,
    /// Covariance weight
    #[arg(long, default_value_t = 1.0)]
    pub nu: f64,
    /// Variance target
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub eps_var: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps_ln: f64,
    /// Triplet-loss margin
    #[arg(long, default_value_t = 0.2)]
    pub margin: f64,
    /// Contrastive-loss temperature
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Wounds per batch [default: 32; 8 for triplet, 128 for contrastive]
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub weight_decay: f64,
    #[arg(long, default_value = "cosine", value_parser = parse_schedule)]
    pub lr_schedule: LrSchedule,
    #[arg(long, default_value = "attention", value_parser = parse_pooling)]
    pub pooling: Pooling,
    /// Attention MLP width
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    /// Embedding dimension
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    /// Maximum tokens sampled per wound (0 keeps all)
    #[arg(long, default_value_t = 1024)]
    pub token_cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Feature file (plain containers, or pairs whose first view is used)
    #[arg(long, value_name = "FILE")]
    pub features: PathBuf,
    /// Trained head parameters
    #[arg(long, value_name = "FILE")]
    pub head: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Maximum tokens sampled per wound (0 keeps all)
    #[arg(long, default_value_t = 1024)]
    pub token_cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DistancesArgs {
    #[arg(long, value_name = "FILE")]
    pub embeddings: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value = "euclidean", value_parser = parse_metric)]
    pub metric: Metric,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Vision embedding or distance CSV (detected from the header)
    #[arg(long, value_name = "FILE")]
    pub vision: PathBuf,
    /// Text embedding or distance CSV (detected from the header)
    #[arg(long, value_name = "FILE")]
    pub text: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Fallback vision weight
    #[arg(long, default_value_t = 0.7)]
    pub alpha: f64,
    #[arg(long, default_value = "uncertainty", value_parser = parse_fusion)]
    pub mode: FusionMode,
    /// Metric for embedding inputs
    #[arg(long, default_value = "euclidean", value_parser = parse_metric)]
    pub metric: Metric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Embedding CSV to score
    #[arg(long, value_name = "FILE", conflicts_with = "distances", required_unless_present = "distances")]
    pub embeddings: Option<PathBuf>,
    /// Distance CSV to score
    #[arg(long, value_name = "FILE")]
    pub distances: Option<PathBuf>,
    /// Reference judgments (JSONL)
    #[arg(long, value_name = "FILE")]
    pub judgments: PathBuf,
    /// Metric for embedding inputs
    #[arg(long, default_value = "euclidean", value_parser = parse_metric)]
    pub metric: Metric,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write the report here instead of stdout
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NeighborsArgs {
    /// Embedding or distance CSV (detected from the header)
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Query item id
    #[arg(long)]
    pub item: String,
    #[arg(short, long, default_value_t = 5)]
    pub k: usize,
    /// Metric for embedding inputs
    #[arg(long, default_value = "euclidean", value_parser = parse_metric)]
    pub metric: Metric,
    /// List the most distant items instead
    #[arg(long)]
    pub farthest: bool,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Task list: JSONL with anchor/left/right and optional triplet_id
    #[arg(long, value_name = "FILE")]
    pub tasks: PathBuf,
    /// Append-only judgment log (replayed at startup)
    #[arg(long, value_name = "FILE")]
    pub log: PathBuf,
    /// Directory of item assets named `<id>.<ext>`
    #[arg(long, value_name = "DIR")]
    pub assets: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    #[arg(long, default_value_t = 10)]
    pub lease_minutes: i64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Use a planted-structure corpus (currently the only mode)
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 60)]
    pub n_items: usize,
    #[arg(long, default_value_t = 4)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise_sd: f64,
    /// Embedding dimensions to sweep
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6")]
    pub dims: Vec<usize>,
    /// Training-pool fractions to sweep
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1,1")]
    pub budgets: Vec<f64>,
    /// Repetitions per setting
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0.1)]
    pub holdout: f64,
    /// SOE dimension for the budget sweep
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 2048)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn parse_loss(s: &str) -> Result<LossKind> {
    s.parse()
}

fn parse_schedule(s: &str) -> Result<LrSchedule> {
    s.parse()
}

fn parse_pooling(s: &str) -> Result<Pooling> {
    s.parse()
}

fn parse_metric(s: &str) -> Result<Metric> {
    s.parse()
}

fn parse_fusion(s: &str) -> Result<FusionMode> {
    s.parse()
}

/// `key = value` lines; `#` starts a comment. Keys may use `_` or `-`.
pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, Some(i + 1), "expected `key = value`"))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::format(path, Some(i + 1), "empty key"));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// The innermost subcommand's matches and command definition.
fn leaf<'a>(mut m: &'a ArgMatches, mut cmd: &'a clap::Command) -> (&'a ArgMatches, &'a clap::Command) {
    while let Some((name, sub)) = m.subcommand() {
        match cmd.find_subcommand(name) {
            Some(c) => {
                cmd = c;
                m = sub;
            }
            None => break,
        }
    }
    (m, cmd)
}

/// Appends config entries for every flag the command line left unset.
fn merge_config(argv: Vec<OsString>, entries: &[(String, String)]) -> Result<Vec<OsString>> {
    let cmd = Cli::command();
    let matches = cmd
        .clone()
        .try_get_matches_from(&argv)
        .map_err(|e| Error::Config(e.to_string()))?;
    let (m, sub) = leaf(&matches, &cmd);
    let mut out = argv;
    for (key, value) in entries {
        if key == "config" {
            continue;
        }
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            eprintln!("warning: config key {key:?} is not a flag of this command; ignored");
            continue;
        };
        if m.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = format!("--{key}");
        if matches!(arg.get_action(), clap::ArgAction::SetTrue) {
            match value.as_str() {
                "true" => out.push(flag.into()),
                "false" => {}
                other => {
                    return Err(Error::Config(format!(
                        "config key {key:?} takes true or false, got {other:?}"
                    )))
                }
            }
        } else {
            out.push(format!("{flag}={value}").into());
        }
    }
    Ok(out)
}

fn parse(argv: Vec<OsString>) -> std::result::Result<Cli, i32> {
    let first = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return Err(code);
        }
    };
    let Some(path) = first.config.clone() else {
        return Ok(first);
    };
    let merged = read_config(&path).and_then(|entries| merge_config(argv, &entries));
    let merged = match merged {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return Err(e.exit_code());
        }
    };
    let cmd = Cli::command();
    match cmd.try_get_matches_from(merged).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => Ok(cli),
        Err(e) => {
            eprintln!("error: in config file {}:", path.display());
            let _ = e.print();
            Err(1)
        }
    }
}

/// Runs one command line (`argv[0]` is the program name) and returns its exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match parse(argv) {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
