//! Command-line front end: run experiments, aggregate reports, and validate
//! configuration files.

use clap::{Parser, Subcommand};
use metatune::harness::{output_root, report, run_experiment};
use metatune::load_config;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "metatune", version, about = "Hyperparameter meta-optimization for desk-scale RL agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured optimizer for every seed and write the result
    /// tree under the output root.
    Run {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Added to every configured seed (parallel sweeps from one config).
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
        /// Output root; the METATUNE_OUT environment variable overrides
        /// this, and `results` is the fallback.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate completed executions into comparison tables under
    /// `<dir>/report/`.
    Report {
        /// One or more experiment directories (`<root>/<name>`).
        #[arg(long = "in", required = true, num_args = 1..)]
        in_dirs: Vec<PathBuf>,
    },
    /// Parse and validate a configuration without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run { config, seed_offset, out } => {
            let experiment = load_config(&config).map_err(|e| e.to_string())?;
            let root = output_root(out.as_deref());
            let executions =
                run_experiment(&experiment, &root, seed_offset).map_err(|e| e.to_string())?;
            println!(
                "{}: {} executions -> {}",
                experiment.name,
                executions.len(),
                root.join(&experiment.name).display()
            );
            for exec in &executions {
                println!(
                    "  {:<14} seed {:<4} best_y {:<10} train_steps {}",
                    exec.optimizer.dir_name(),
                    exec.seed,
                    format!("{:.6}", exec.best_y),
                    exec.total_train_steps
                );
            }
            Ok(())
        }
        Command::Report { in_dirs } => {
            let outcomes = report(&in_dirs).map_err(|e| e.to_string())?;
            for (dir, outcome) in in_dirs.iter().zip(&outcomes) {
                println!("{}: {} comparison rows -> {}", dir.display(), outcome.rows.len(), dir.join("report").display());
                for warning in &outcome.warnings {
                    eprintln!("  warning: {warning}");
                }
                // Final-episode summary per optimizer.
                let last = outcome.rows.iter().map(|r| r.meta_episode).max().unwrap_or(0);
                for row in outcome.rows.iter().filter(|r| r.meta_episode == last) {
                    println!(
                        "  {:<14} final mean best {:.6} (95% CI {:.6}..{:.6})",
                        row.optimizer, row.mean_best, row.ci_low, row.ci_high
                    );
                }
            }
            Ok(())
        }
        Command::Validate { config } => {
            let experiment = load_config(&config).map_err(|e| e.to_string())?;
            let resolved = experiment.validate().map_err(|e| e.to_string())?;
            println!(
                "{}: valid ({} optimizers x {} seeds, {} meta-episodes, {} search dimensions)",
                resolved.name,
                resolved.optimizers.len(),
                resolved.seeds.len(),
                resolved.settings.meta_episodes,
                resolved.settings.space.len()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
