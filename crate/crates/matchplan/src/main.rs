//! Command-line driver for the candidate-generation experiment pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use matchplan::config::RunConfig;
use matchplan::data::SampleMode;
use matchplan::eval::format_report;
use matchplan::pipeline;

#[derive(Parser)]
#[command(
    name = "matchplan",
    about = "Learned match-plan candidate generation over a fielded static-rank-ordered index"
)]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the corpus and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the work directory holding all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and query log.
    GenCorpus,
    /// Build the fielded inverted index from the corpus.
    BuildIndex,
    /// Run the category baseline plan, recording reward traces and state points.
    TraceBaseline {
        #[arg(long)]
        category: String,
    },
    /// Fit the equal-mass state binner from baseline trace points.
    FitBins {
        #[arg(long)]
        category: String,
    },
    /// Train the category policy with tabular Q-learning.
    Train {
        #[arg(long)]
        category: String,
    },
    /// Compare the trained policy against the baseline on a fresh sample.
    Evaluate {
        #[arg(long)]
        category: String,
        /// Query sampling mode: weighted (by popularity) or unweighted.
        #[arg(long, default_value = "unweighted")]
        mode: SampleMode,
    },
    /// Print all evaluation reports in the work directory.
    Report,
    /// Run every stage for both categories.
    RunAll {
        #[arg(long, default_value = "unweighted")]
        mode: SampleMode,
    },
}

fn load_config(cli: &Cli) -> matchplan::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.corpus.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.work_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> matchplan::Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenCorpus => pipeline::cmd_gen_corpus(&cfg),
        Command::BuildIndex => pipeline::cmd_build_index(&cfg),
        Command::TraceBaseline { category } => pipeline::cmd_trace_baseline(&cfg, category),
        Command::FitBins { category } => pipeline::cmd_fit_bins(&cfg, category),
        Command::Train { category } => pipeline::cmd_train(&cfg, category),
        Command::Evaluate { category, mode } => {
            let report = pipeline::cmd_evaluate(&cfg, category, *mode)?;
            print!("{}", format_report(&report));
            Ok(())
        }
        Command::Report => {
            let text = pipeline::cmd_report(&cfg)?;
            print!("{text}");
            Ok(())
        }
        Command::RunAll { mode } => {
            let reports = pipeline::run_all(&cfg, *mode)?;
            for report in reports.values() {
                print!("{}", format_report(report));
                println!();
            }
            Ok(())
        }
    }
}

fn stage_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::GenCorpus => "gen-corpus",
        Command::BuildIndex => "build-index",
        Command::TraceBaseline { .. } => "trace-baseline",
        Command::FitBins { .. } => "fit-bins",
        Command::Train { .. } => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::Report => "report",
        Command::RunAll { .. } => "run-all",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error in {}: {e}", stage_name(&cli.command));
            ExitCode::FAILURE
        }
    }
}
