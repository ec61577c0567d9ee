mod chat;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graphif::graph::ExportFormat;
use graphif::pipeline::PipelineMode;

#[derive(Parser)]
#[command(name = "graphif", version, about = "Relation-graph middleware for multi-turn instruction following")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct BackendArgs {
    /// Directory of scripted fixture files (offline, deterministic).
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// OpenAI-compatible endpoint, e.g. http://localhost:8000/v1.
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over a dataset and write per-sample artifacts.
    Run {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<PipelineMode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        passes: Option<u32>,
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long)]
        max_iterations: Option<u32>,
        /// Continue samples from their checkpoints instead of starting over.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Score a finished run against its dataset.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Where report.json and outcomes.csv go (default: the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        judge_fixtures: Option<PathBuf>,
        #[arg(long)]
        judge_base_url: Option<String>,
        #[arg(long)]
        judge_model: Option<String>,
    },
    /// Generate a synthetic dataset from a built-in graph template.
    Synth {
        /// mteval_star, structflow_star or single_chain.
        template: String,
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Number of samples (seeds seed, seed+1, ...).
        #[arg(long, default_value_t = 1)]
        samples: u32,
        /// Also write cooperative scripted fixtures for offline runs.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Print a sample's relation graph from a finished run.
    Graph {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        sample: String,
        #[arg(long, default_value = "dot")]
        format: ExportFormat,
        #[arg(long, default_value_t = 1)]
        pass: u32,
    },
    /// Interactive session against a backend.
    Chat {
        #[arg(long, value_parser = parse_mode)]
        mode: Option<PipelineMode>,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Convert chat JSONL (`{"id", "messages": [...]}` per line) into a dataset.
    Import {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<PipelineMode, String> {
    s.parse().map_err(|e: graphif::pipeline::PipelineError| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { dataset, out, mode, seed, passes, parallel, max_iterations, resume, backend } => {
            let flags = config::Overrides {
                mode,
                dataset,
                out,
                passes,
                parallel,
                seed,
                fixtures: backend.fixtures,
                base_url: backend.base_url,
                model: backend.model,
                max_iterations,
            };
            commands::run(cli.config.as_deref(), flags, resume)
        }
        Command::Eval { run, dataset, out, judge_fixtures, judge_base_url, judge_model } => {
            let judge = config::EndpointConfig {
                fixtures: judge_fixtures,
                base_url: judge_base_url,
                model: judge_model,
                ..Default::default()
            };
            commands::eval(cli.config.as_deref(), &run, &dataset, out.as_deref(), judge)
        }
        Command::Synth { template, seed, out, samples, fixtures } => {
            commands::synth(&template, seed, samples, &out, fixtures.as_deref())
        }
        Command::Graph { run, sample, format, pass } => commands::graph(&run, &sample, format, pass),
        Command::Chat { mode, backend } => {
            let flags = config::Overrides {
                mode,
                fixtures: backend.fixtures,
                base_url: backend.base_url,
                model: backend.model,
                ..Default::default()
            };
            chat::run(cli.config.as_deref(), flags)
        }
        Command::Import { input, out } => commands::import(&input, &out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
