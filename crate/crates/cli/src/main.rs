mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "greg", version, about = "Topic models that transfer across corpora")]
struct Cli {
    /// Random seed for every stochastic step of the command
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tokenise JSONL corpora into archives over one shared vocabulary
    Preprocess(PreprocessArgs),
    /// Write a noisy copy of a corpus built from random augmentation chains
    Augment(AugmentArgs),
    /// Train a topic model (`--gamma 0` trains without the regulariser)
    Train(TrainArgs),
    /// Write document-topic proportions
    Infer(InferArgs),
    /// Evaluate models on their training corpus
    Eval(EvalArgs),
    /// Evaluate source-trained models on other corpora
    Transfer(TransferArgs),
    /// Print the top words of every topic
    Topics(TopicsArgs),
    /// Generate a synthetic source/target pair with embeddings
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// JSONL file with `id`, `text` and optional `label` per line; repeat for several corpora
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Word vectors, one `word v1 .. vL` per line
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Stop-word file replacing the built-in list
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Keep words with document frequency above this
    #[arg(long, default_value_t = 5)]
    pub min_df: usize,
    /// Keep words in fewer than this fraction of documents
    #[arg(long, default_value_t = 0.8)]
    pub max_df: f64,
    /// Training fraction of the train/test split
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    /// Output directory; one archive per input named after its file stem
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Defaults to `embeddings.txt` inside the corpus archive
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Fraction of each document perturbed per operator
    #[arg(long, default_value_t = 0.75)]
    pub strength: f64,
    #[arg(long, default_value_t = 20)]
    pub neighbor_pool: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Defaults to `embeddings.txt` inside the corpus archive
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// TOML configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for cached neighbour tables
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Words per topic in the regulariser's topic costs
    #[arg(long)]
    pub top_words: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub stop_threshold: Option<f64>,
    /// Augmentation operator, e.g. HighestToSimilar
    #[arg(long)]
    pub augment: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub neighbor_pool: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// all, train or test
    #[arg(long, default_value = "all")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EvalOptions {
    /// Trees in the random forest
    #[arg(long, default_value_t = 10)]
    pub trees: usize,
    /// Words per topic for coherence; 0 skips it
    #[arg(long, default_value_t = 10)]
    pub npmi_top: usize,
    /// Fraction of the most coherent topics averaged
    #[arg(long, default_value_t = 0.5)]
    pub npmi_fraction: f64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint; repeat for several runs
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub options: EvalOptions,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Target corpus archive; repeat for several targets
    #[arg(long = "target", required = true)]
    pub targets: Vec<PathBuf>,
    #[command(flatten)]
    pub options: EvalOptions,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TopicsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Corpus the model was trained on, for its vocabulary
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Also write topics.txt and a manifest here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub docs: usize,
    #[arg(long, default_value_t = 4)]
    pub themes: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn report(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(core) = e.chain().find_map(|c| c.downcast_ref::<greg_core::Error>()) {
        return core.kind();
    }
    if e.chain().any(|c| c.is::<std::io::Error>()) {
        return "io";
    }
    "cli"
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            report("usage", first);
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            report("cli", &e.to_string());
            return ExitCode::from(2);
        }
    }
    let seed = cli.seed;
    let result = match cli.command {
        Command::Preprocess(a) => commands::preprocess(&a, seed),
        Command::Augment(a) => commands::augment(&a, seed),
        Command::Train(a) => commands::train(&a, seed),
        Command::Infer(a) => commands::infer(&a, seed),
        Command::Eval(a) => commands::eval(&a, seed),
        Command::Transfer(a) => commands::transfer(&a, seed),
        Command::Topics(a) => commands::topics(&a, seed),
        Command::Synth(a) => commands::synth(&a, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(error_kind(&e), &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}
