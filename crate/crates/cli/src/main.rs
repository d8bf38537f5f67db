use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use sldac::diagnostics::{grad_check, oracle_check, CheckResult};
use sldac::harness::{run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "sldac", version, about = "Single-loop deep actor-critic for constrained MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment config and write metrics and a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Output directory; defaults to the config's `output_dir` or `runs/`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of the network and policy gradients.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Subproblem solvers against grid search and the chain MDP oracle.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Checks a config for hard violations and reports schedule-region warnings.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn report(results: &[CheckResult]) -> ExitCode {
    for r in results {
        println!("{r}");
    }
    if results.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))
}

fn main() -> Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { config, seeds, out } => {
            let mut cfg = load(&config)?;
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
            }
            let out = out
                .or_else(|| cfg.output_dir.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("runs"));
            let summary = run_experiment(&cfg, Some(&out))?;
            for s in &summary.seeds {
                println!(
                    "seed {}: final J_hat {:?}, constraint satisfaction {:.3}, objective ratio {}",
                    s.seed,
                    s.final_j_hat,
                    s.satisfaction_fraction,
                    s.objective_ratio.map_or("n/a".into(), |r| format!("{r:.3}"))
                );
            }
            println!("wrote {}", out.join("summary.json").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::GradCheck { instances, seed } => Ok(report(&grad_check(instances, seed)?)),
        Command::OracleCheck { instances, seed } => Ok(report(&oracle_check(instances, seed)?)),
        Command::ValidateConfig { config } => {
            let cfg = load(&config)?;
            let report = cfg.check();
            for v in &report.region_violations {
                println!("warning: step-size exponents violate {v}");
            }
            for e in &report.errors {
                println!("error: {e}");
            }
            if report.ok() {
                println!("config is valid");
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::FAILURE)
            }
        }
    }
}
