use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use svrb::par;
use svrb_cli::config::{display_value, ExperimentConfig, FlatConfig};
use svrb_cli::experiment::Experiment;
use svrb_cli::output::write_outputs;
use svrb_cli::sweep::{sweep, write_sweep, Grid};
use svrb_cli::{output_dir, CliError};

#[derive(Parser)]
#[command(name = "svrb", version, about = "Run stochastic bilevel optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `schedule.c=2`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Threads for independent runs (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory (default: run.out, then $SVRB_OUT_DIR, then svrb_out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured solver for every seed.
    Run(Common),
    /// Run a grid of configs and select the best cell.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid file mapping config keys to value lists.
        #[arg(long)]
        grid: PathBuf,
    },
    /// Parse the config and build the problem without running.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn load(path: &Path, overrides: &[String]) -> Result<FlatConfig, CliError> {
    let mut cfg = FlatConfig::load(path)?;
    for o in overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

fn run(common: &Common) -> Result<(), CliError> {
    let flat = load(&common.config, &common.overrides)?;
    let exp = Experiment::build(ExperimentConfig::from_flat(&flat)?)?;
    let dir = output_dir(common.out.clone(), exp.config.out.clone());
    let runs = par::with_workers(common.workers, || exp.run_all());
    write_outputs(&dir, &runs)?;
    let failed = runs.iter().filter(|r| !r.status.is_ok()).count();
    println!("{} runs ({} failed), output in {}", runs.len(), failed, dir.display());
    Ok(())
}

fn run_sweep(common: &Common, grid_path: &Path) -> Result<(), CliError> {
    let flat = load(&common.config, &common.overrides)?;
    let grid = Grid::from_flat(&FlatConfig::load(grid_path)?)?;
    let out = ExperimentConfig::from_flat(&flat).ok().and_then(|c| c.out);
    let dir = output_dir(common.out.clone(), out);
    let result = par::with_workers(common.workers, || sweep(&flat, &grid))?;
    write_sweep(&dir, &grid, &result)?;
    let best = result.best_cell();
    let assignment: Vec<String> = best
        .assignment
        .iter()
        .map(|(k, v)| format!("{k}={}", display_value(v)))
        .collect();
    match best.score {
        Some(s) => println!("best cell {}: {} (median final objective {s})", result.best, assignment.join(" ")),
        None => println!("every cell failed; first cell: {}", assignment.join(" ")),
    }
    println!("output in {}", dir.display());
    Ok(())
}

fn validate(config: &Path, overrides: &[String]) -> Result<(), CliError> {
    let flat = load(config, overrides)?;
    let exp = Experiment::build(ExperimentConfig::from_flat(&flat)?)?;
    let solvers: Vec<&str> = exp.config.solvers.iter().map(|s| s.algorithm.name()).collect();
    println!(
        "ok: {} task(s), upper dimension {}, solvers {}, {} seed(s)",
        exp.family.len(),
        exp.family.upper_dim(),
        solvers.join(","),
        exp.config.seeds.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(common) => run(common),
        Command::Sweep { common, grid } => run_sweep(common, grid),
        Command::Validate { config, overrides } => validate(config, overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
