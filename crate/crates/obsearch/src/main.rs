use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use obsearch_core::harness::{self, Command, ExperimentConfig};
use obsearch_core::Error;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Bench,
    Search,
    Permtest,
    Report,
}

/// Observation-space benchmarks, searches and permutation tests.
#[derive(Parser, Debug)]
#[command(name = "obsearch", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// JSON experiment config. Optional for `report`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output root; for `report`, the directory to summarize.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace an existing run directory with the same config hash.
    #[arg(long)]
    force: bool,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if matches!(cli.command, Cmd::Report) => ExperimentConfig::default(),
        None => return Err(Error::Config("--config is required".into())),
    };
    if let Some(n) = cli.seeds {
        config.seeds = n;
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let config = load(cli)?;
    match cli.command {
        Cmd::Bench => {
            let record = harness::run_bench(&config, cli.force)?;
            print_summary(&config, Command::Bench, &record)
        }
        Cmd::Search => {
            let (record, _) = harness::run_search_cmd(&config, cli.force)?;
            print_summary(&config, Command::Search, &record)
        }
        Cmd::Permtest => {
            let (record, _) = harness::run_permtest_cmd(&config, cli.force)?;
            print_summary(&config, Command::Permtest, &record)
        }
        Cmd::Report => {
            for path in harness::run_report(&config.out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn print_summary(config: &ExperimentConfig, command: Command, record: &harness::RunRecord) -> Result<(), Error> {
    println!("{}", config.run_dir(command)?.display());
    let failed = record.seeds.iter().filter(|s| !s.ok).count();
    if failed > 0 {
        println!("{failed} of {} seeds failed", record.seeds.len());
    }
    for s in &record.series {
        println!("{:<12} seeds={:<3} auc={:.3}", s.label, s.per_seed.len(), s.mean_auc());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::AllSeedsFailed(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
