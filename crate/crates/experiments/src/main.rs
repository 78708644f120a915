use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fqe_experiments::commands;
use fqe_experiments::{ExpError, ExpResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fqe-exp", version, about = "Bootstrapped fitted Q-evaluation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Collect datasets under the behavior policy.
    Collect,
    /// Fit FQE on one dataset and report inference results.
    Fqe,
    /// Compare error distributions of the two bootstrap schemes.
    Distribution,
    /// Coverage and width of confidence intervals.
    Coverage,
    /// Runtime of vanilla and subsampled bootstraps.
    Bench,
    /// Interval and variance table for both bootstrap schemes.
    TableC2,
    /// Bootstrap correlation between two target policies.
    Correlation,
}

fn load(cli: &Cli) -> ExpResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ExpError::io(path, e))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("summaries serialize"));
}

fn run(cli: &Cli) -> ExpResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ExpError::Config(format!("cannot start {n} threads: {e}")))?;
    }
    let cfg = load(cli)?;
    match cli.command {
        Command::Collect => print_json(&commands::run_collect(&cfg)?.files),
        Command::Fqe => print_json(&commands::run_fqe(&cfg)?),
        Command::Distribution => print_json(&commands::run_distribution(&cfg)?),
        Command::Coverage => print_json(&commands::run_coverage(&cfg)?),
        Command::Bench => print_json(&commands::run_bench(&cfg)?),
        Command::TableC2 => print_json(&commands::run_table_c2(&cfg)?),
        Command::Correlation => print_json(&commands::run_correlation(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e);
            ExitCode::from(2)
        }
    }
}
