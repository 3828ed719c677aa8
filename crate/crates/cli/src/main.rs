//! `subrank` command-line runner.

mod commands;
mod config;
mod error;
mod manifest;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;
use crate::manifest::Manifest;

#[derive(Parser, Debug)]
#[command(name = "subrank", version, about = "Label-free word substitution: training, evaluation and statistics")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for site sampling, training and toy data (overrides the config)
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true, value_name = "DIR", default_value = "subrank-out")]
    out: PathBuf,

    /// Persistent score cache (JSON lines)
    #[arg(long, global = true, value_name = "PATH")]
    scorer_cache: Option<PathBuf>,

    /// Candidates per token for the p-value statistic
    #[arg(long = "k-s", global = true, value_name = "INT")]
    k_s: Option<usize>,

    /// Significance level
    #[arg(long, global = true, value_name = "FLOAT")]
    alpha: Option<f64>,

    /// Dataset file (overrides data.path)
    #[arg(long, global = true, value_name = "PATH")]
    data: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fine-tune the masked LM with the configured loss
    Train,
    /// Write substitution decisions for every sentence of the dataset
    Suggest,
    /// CS, ABR and top-2 ratio of the masked LM on the dataset
    Evaluate,
    /// p-value proportions and agreement strata on the dataset
    Stat,
    /// Score sentence pairs read from a JSON-lines file
    Score {
        /// Lines of {"original": .., "modified": ..}
        input: PathBuf,
    },
    /// Prompt an external chat model for suggestions
    BaselineLlm {
        /// Use the prompt that asks for ranked suggestions
        #[arg(long)]
        ranked: bool,
    },
    /// Collect run directories into CSV tables and SVG histograms
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Train the small synthetic models and write them with a config
    InitModels,
    /// Print the default configuration
    PrintConfig,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Suggest => "suggest",
            Command::Evaluate => "evaluate",
            Command::Stat => "stat",
            Command::Score { .. } => "score",
            Command::BaselineLlm { .. } => "baseline-llm",
            Command::Report { .. } => "report",
            Command::InitModels => "init-models",
            Command::PrintConfig => "print-config",
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::PrintConfig = cli.command {
        let text = toml::to_string(&RunConfig::default()).map_err(|e| CliError::Report(e.to_string()))?;
        print!("{text}");
        return Ok(());
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        scorer_cache: cli.scorer_cache.clone(),
        k_s: cli.k_s,
        alpha: cli.alpha,
    })?;
    if let Some(d) = &cli.data {
        cfg.data.path = Some(d.clone());
    }
    let out: &Path = &cli.out;
    std::fs::create_dir_all(out)?;

    let outputs = match &cli.command {
        Command::Train => commands::train(&cfg, out)?,
        Command::Suggest => commands::suggest_cmd(&cfg, out)?,
        Command::Evaluate => commands::evaluate(&cfg, out)?,
        Command::Stat => commands::stat(&cfg, out)?,
        Command::Score { input } => commands::score(&cfg, input, out)?,
        Command::BaselineLlm { ranked } => commands::baseline_llm(&cfg, *ranked, out)?,
        Command::Report { runs } => report::report(runs, out)?,
        Command::InitModels => commands::init_models(&cfg, out)?,
        Command::PrintConfig => unreachable!("handled above"),
    };

    let mut manifest = Manifest::new(cli.command.name(), cli.config.as_deref(), &cfg);
    manifest.inputs = [&cfg.model.checkpoint, &cfg.scorer.checkpoint, &cfg.data.path, &cfg.data.heldout]
        .into_iter()
        .flatten()
        .cloned()
        .collect();
    if let Command::Score { input } = &cli.command {
        manifest.inputs.push(input.clone());
    }
    manifest.outputs = outputs;
    manifest.outputs.push(manifest::RESOLVED_CONFIG_FILE.into());
    manifest.write(out)?;
    if let Some(cache) = cfg.scorer.cache.as_ref() {
        log::info!("score cache at {}", cache.display());
    }
    eprintln!("{}: wrote {}", cli.command.name(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
