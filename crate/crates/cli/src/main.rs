use std::path::PathBuf;
use std::process::ExitCode;

use boltzsim_cli::{load_config, run, ExperimentConfig, RunOptions, Subcommand};
use clap::Parser;

/// Particle experiments for the non-cutoff Boltzmann equation.
#[derive(Debug, Parser)]
#[command(name = "boltzsim", version)]
struct Cli {
    /// Subcommand; overrides `subcommand` in the config file.
    #[arg(value_enum)]
    command: Option<Subcommand>,
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Single-threaded run with bit-reproducible summaries.
    #[arg(long)]
    deterministic: bool,
    /// Overrides the config output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => match load_config(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(c) = cli.command {
        cfg.subcommand = Some(c);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.output_dir {
        cfg.output_dir = o;
    }
    let opts = RunOptions { threads: cli.threads, deterministic: cli.deterministic };
    match run(&cfg, &opts) {
        Ok(m) => {
            for c in &m.checks {
                println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
            println!("manifest: {}", cfg.output_dir.join("manifest.json").display());
            if m.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
