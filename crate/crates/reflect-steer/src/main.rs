//! Thin CLI over the pipeline: extract, discover, evaluate, report.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use reflect_steer::config::{Overrides, RunConfig};
use reflect_steer::harness::Direction;
use reflect_steer::pipeline;

#[derive(Parser)]
#[command(name = "reflect-steer")]
#[command(
    about = "Extract reflection steering vectors, discover trigger instructions, and evaluate interventions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file
    #[arg(long)]
    config: PathBuf,

    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Comma-separated layer list (overrides extract/sweep/discovery layers)
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,

    /// Reflection-level pair, e.g. 0:2 (overrides configured pairs)
    #[arg(long)]
    pair: Option<String>,

    /// Intervention direction for sweeps
    #[arg(long)]
    direction: Option<CliDirection>,

    /// Top-k candidates to select during discovery
    #[arg(long)]
    top_k: Option<usize>,

    /// Worker threads for per-sample and per-candidate fan-out
    #[arg(long)]
    parallel: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliDirection {
    Enhance,
    Inhibit,
}

#[derive(Subcommand)]
enum Command {
    /// Capture activations and write instruction means plus steering vectors
    Extract(Common),
    /// Rank candidate instructions against a steering vector and select top-k
    Discover(Common),
    /// Run the three-level suite, discovered-instruction evals, and sweeps
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Verify end-to-end that a zero-delta intervention reproduces the
        /// baseline continuation before evaluating
        #[arg(long)]
        self_check: bool,
    },
    /// Re-render report CSVs from a previous evaluation's results.json
    Report(Common),
}

fn load_config(common: &Common) -> reflect_steer::Result<RunConfig> {
    let mut config = RunConfig::load(&common.config)?;
    config.apply_overrides(&Overrides {
        out: common.out.clone(),
        layers: common.layers.clone(),
        pair: common.pair.clone(),
        direction: common.direction.map(|d| match d {
            CliDirection::Enhance => Direction::Enhance,
            CliDirection::Inhibit => Direction::Inhibit,
        }),
        top_k: common.top_k,
        parallel: common.parallel,
    });
    config.validate()?;
    Ok(config)
}

fn run() -> reflect_steer::Result<()> {
    match Cli::parse().command {
        Command::Extract(common) => {
            let config = load_config(&common)?;
            let summary = pipeline::extract(&config)?;
            for warning in &summary.skipped {
                eprintln!("warning: {warning}");
            }
            println!(
                "extracted {} means and {} steering vectors from {} train samples x {} instructions",
                summary.n_means, summary.n_steering, summary.n_train, summary.n_instructions
            );
            println!("store: {}", summary.store_path.display());
            println!("split: {}", summary.split_path.display());
        }
        Command::Discover(common) => {
            let config = load_config(&common)?;
            let summary = pipeline::discover(&config)?;
            for warning in &summary.warnings {
                eprintln!("warning: {warning}");
            }
            println!(
                "ranked {} pool candidates at layer {}",
                summary.pool_size, summary.layer
            );
            println!("steering top-k: {}", summary.selected_steering.join(", "));
            println!(
                "input-embedding top-k: {}",
                summary.selected_embedding.join(", ")
            );
            println!("rankings: {}", summary.rankings_path.display());
            println!("selected: {}", summary.selected_path.display());
        }
        Command::Evaluate { common, self_check } => {
            let config = load_config(&common)?;
            let summary = pipeline::evaluate(&config, self_check)?;
            if let Some(n) = summary.self_check {
                println!("self-check: zero-delta neutrality held on {n} samples");
            }
            for (level, avg) in &summary.level_averages {
                println!("level {level} average accuracy: {avg:.4}");
            }
            for (method, avg) in &summary.extra_averages {
                println!("discovered ({method}) average accuracy: {avg:.4}");
            }
            println!(
                "wrote {} report files and {} sweeps to {}",
                summary.report_files.len(),
                summary.n_sweeps,
                config.output.dir.display()
            );
            println!("raw results: {}", summary.results_path.display());
        }
        Command::Report(common) => {
            let config = load_config(&common)?;
            let summary = pipeline::report(&config)?;
            println!("re-rendered {} report files", summary.report_files.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
