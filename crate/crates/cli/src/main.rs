mod analyze;
mod data;
mod infer;
mod select;
mod train;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Adapter souping experiments for low-resource translation.
#[derive(Parser)]
#[command(name = "soupmt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by commands that read an experiment manifest.
#[derive(Args, Clone, Default)]
pub struct ConfigArg {
    /// Experiment manifest (TOML). Explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the bundled synthetic language family to a directory.
    Synth(data::SynthArgs),
    /// Split documents into sentences and apply the cleaning rules.
    Preprocess(data::PreprocessArgs),
    /// Train a shared BPE vocabulary.
    TrainBpe(data::TrainBpeArgs),
    /// Train the base many-to-many model.
    Pretrain(train::PretrainArgs),
    /// Write an untrained adapter for one side of the model.
    InitAdapter(train::InitAdapterArgs),
    /// Train a language adapter with the denoising objective.
    TrainAdapter(train::TrainAdapterArgs),
    /// Weighted average of adapters sharing an initialization.
    Soup(infer::SoupArgs),
    /// Fine-tune cross-attention with frozen adapters.
    Caft(train::CaftArgs),
    /// Translate one segment per line.
    Translate(infer::TranslateArgs),
    /// Corpus BLEU and chrF.
    Evaluate(infer::EvaluateArgs),
    /// Rank transfer-language candidates.
    Select(select::SelectArgs),
    /// Adapter variance and training-log comparisons.
    #[command(subcommand)]
    Analyze(analyze::AnalyzeCommand),
}

fn run(cli: Cli) -> soupmt::Result<()> {
    match cli.command {
        Command::Synth(a) => data::synth(a),
        Command::Preprocess(a) => data::preprocess(a),
        Command::TrainBpe(a) => data::train_bpe(a),
        Command::Pretrain(a) => train::pretrain(a),
        Command::InitAdapter(a) => train::init_adapter(a),
        Command::TrainAdapter(a) => train::train_adapter(a),
        Command::Soup(a) => infer::soup(a),
        Command::Caft(a) => train::caft(a),
        Command::Translate(a) => infer::translate(a),
        Command::Evaluate(a) => infer::evaluate(a),
        Command::Select(a) => select::select(a),
        Command::Analyze(c) => analyze::analyze(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
