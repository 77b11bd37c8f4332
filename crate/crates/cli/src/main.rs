mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "clip3d", version, about = "Scene-encoder pre-training and 3D question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes, stub embeddings and a question index.
    GenSynthetic(GenArgs),
    /// Pre-train the detector and scene encoder against frozen embeddings.
    Pretrain(PretrainArgs),
    /// Fine-tune the question-answering model.
    Finetune(FinetuneArgs),
    /// Score predictions, produced here from a checkpoint or read from a file.
    Evaluate(EvaluateArgs),
    /// Export scene embeddings as JSON lines.
    Embed(EmbedArgs),
    /// Project scene embeddings to 2-d with t-SNE and plot them.
    Project(ProjectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full desk-scale widths.
    Desk,
    /// Tiny widths for smoke tests.
    Toy,
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long)]
    pub count: usize,
    /// Comma-separated scene types; all known types by default.
    #[arg(long, value_delimiter = ',')]
    pub types: Vec<String>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct PretrainArgs {
    /// Dataset directory (with `scenes/`) or scene file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with optional `preset`, `model`, `pretrain` and `embeddings` keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Embedding file; falls back to the config, then CLIP3D_EMBED_PATH, then `<data>/embeddings.jsonl`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("init").required(true).args(["checkpoint", "from_scratch"]))]
pub struct FinetuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Question index; `<data>/qa.json` or the scene files' questions by default.
    #[arg(long)]
    pub qa: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Pre-trained checkpoint supplying the detector and scene encoder.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Initialize every weight fresh instead of loading a checkpoint.
    #[arg(long)]
    pub from_scratch: bool,
    /// JSON file with optional `preset`, `vqa`, `finetune` and `held_out` keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Questions held out for evaluation, chosen with the run seed.
    #[arg(long)]
    pub held_out: Option<usize>,
    #[arg(long)]
    pub no_augment: bool,
    /// Keep the learning rate constant.
    #[arg(long)]
    pub no_decay: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["checkpoint", "predictions"]))]
pub struct EvaluateArgs {
    /// Scenes; required when predicting from a checkpoint.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub qa: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Existing prediction file (JSON lines).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output JSON-lines file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("weights").required(true).args(["checkpoint", "random_init"]))]
pub struct ProjectArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Project a freshly initialized encoder of the given preset instead.
    #[arg(long, value_enum)]
    pub random_init: Option<Preset>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", error_line("usage", first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::GenSynthetic(a) => commands::gen_synthetic(&a),
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Finetune(a) => commands::finetune(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Embed(a) => commands::embed(&a),
        Command::Project(a) => commands::project(&a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e.chain().find_map(|c| c.downcast_ref::<clip3d::Error>()).map_or("cli", |c| c.kind());
            eprintln!("{}", error_line(kind, &format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
