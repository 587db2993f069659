//! `glosslink` command-line entry point.
//!
//! Exit codes: 0 on success, 1 for data and runtime errors, 2 for usage
//! errors. Failures print one `error: kind=<kind> message=<text>` line on
//! standard error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "glosslink", version, about = "Multilingual WSD via annotation projection and a gloss bi-encoder")]
struct Cli {
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate an inventory and write it in normalized form.
    BuildInventory(BuildInventoryArgs),
    /// Print instance counts and average candidate-set sizes.
    Stats(StatsArgs),
    /// Translate, align and project annotations into a target language.
    Transfer(TransferArgs),
    /// Train a bi-encoder or a frozen-feature classifier.
    Train(TrainArgs),
    /// Predict senses with a trained checkpoint.
    Predict(PredictArgs),
    /// Score predictions against gold keys.
    Evaluate(EvaluateArgs),
    /// Run transfer, training and evaluation on the bundled synthetic task.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
struct BuildInventoryArgs {
    #[arg(long)]
    input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    input_format: Option<InventoryFormatArg>,
    #[arg(long)]
    output: PathBuf,
    /// Output format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    output_format: Option<InventoryFormatArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InventoryFormatArg {
    Tsv,
    Jsonl,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Corpus file: JSON lines, or SemEval-style XML (`.xml`).
    #[arg(long)]
    corpus: PathBuf,
    /// Gold keyfile for an XML corpus.
    #[arg(long)]
    keys: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    inventory: PathBuf,
    /// Row label; defaults to the corpus file stem.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProviderArg {
    Identity,
    Dict,
    Http,
}

#[derive(Debug, Args)]
struct TransferArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    target_lang: String,
    #[arg(long, value_enum, default_value = "dict")]
    provider: ProviderArg,
    /// `source<TAB>target` word list for the dict provider.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    em_iterations: usize,
    #[arg(long, default_value_t = 0.0)]
    null_threshold: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Biencoder,
    Cls,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "biencoder")]
    model: ModelKind,
    #[arg(long)]
    inventory: PathBuf,
    /// Training corpus (repeat for joint training).
    #[arg(long = "corpus", required = true)]
    corpora: Vec<PathBuf>,
    /// Pool all corpora into one shuffled stream.
    #[arg(long)]
    joint: bool,
    /// Resample languages by temperature instead of plain pooling.
    #[arg(long)]
    balance: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Model-selection corpus.
    #[arg(long, conflicts_with = "eval_pool")]
    dev: Option<PathBuf>,
    /// Corpus split into dev and test by the configured dev fraction.
    #[arg(long)]
    eval_pool: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    ff_dim: usize,
    /// Bi-encoder checkpoint whose context encoder provides frozen
    /// features (cls only); a fresh seeded encoder otherwise.
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    inventory: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Prediction keyfile to write.
    #[arg(long)]
    output: PathBuf,
    /// Also write per-instance records with scores as JSON lines.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Re-encode glosses for every instance instead of caching them.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormatArg {
    Markdown,
    Jsonl,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Gold corpus (JSON lines or XML with `--keys`).
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    keys: Option<PathBuf>,
    /// Prediction keyfile.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    inventory: PathBuf,
    /// Report the most-common-sense and least-common-sense parts separately.
    #[arg(long)]
    split_mcs_lcs: bool,
    /// Add a most-common-sense baseline row.
    #[arg(long)]
    with_mcs: bool,
    /// Run name in the report.
    #[arg(long, default_value = "system")]
    name: String,
    #[arg(long, value_enum, default_value = "markdown")]
    format: ReportFormatArg,
    /// Write the report here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Write data, checkpoint, reports and manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!(
                "error: kind={} message={}",
                failure.kind,
                failure.message.replace('\n', " ")
            );
            ExitCode::from(failure.code)
        }
    }
}
