use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lightcl::commands::{compare, cost, profile, run, synth};
use lightcl::config::load_config;
use lightcl_core::stream::DatasetName;

/// Continual-learning experiments: per-layer generalizability profiling,
/// freeze-and-regulate training, baselines, and resource accounting.
#[derive(Parser)]
#[command(name = "lightcl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override single config keys, e.g. --set train.epochs=3.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Measure per-layer memory stability and learning plasticity over a
    /// consecutive task pair.
    Profile(ExperimentArgs),
    /// Train the configured method over the task stream.
    Run {
        #[command(flatten)]
        args: ExperimentArgs,
        /// Rerun even when this config already completed in the output dir.
        #[arg(long)]
        force: bool,
    },
    /// Aggregate run records into an AA comparison table and bar plot.
    Compare {
        /// record.json files from runs of the same stream.
        #[arg(required = true)]
        records: Vec<PathBuf>,
        /// Output directory for the comparison artifacts.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate training FLOPs and peak memory for an architecture spec.
    Cost {
        /// Cost config file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override single config keys.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Generate a synthetic dataset in the loader's on-disk format.
    Synth {
        /// Which dataset format to produce.
        #[arg(long)]
        dataset: DatasetName,
        /// Directory to write the dataset into.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training examples per class (defaults depend on the dataset).
        #[arg(long)]
        per_class_train: Option<usize>,
        /// Test examples per class.
        #[arg(long)]
        per_class_test: Option<usize>,
        /// Image side length (single-channel datasets only).
        #[arg(long)]
        side: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Profile(args) => load_config(&args.config, &args.set, args.seed, args.out.as_deref())
            .and_then(|config| profile::cmd_profile(&config)),
        Command::Run { args, force } => {
            load_config(&args.config, &args.set, args.seed, args.out.as_deref())
                .and_then(|config| run::cmd_run(&config, *force))
        }
        Command::Compare { records, out } => compare::cmd_compare(records, out),
        Command::Cost { config, out, set } => cost::load_cost_config(config, set, out.as_deref())
            .and_then(|config| cost::cmd_cost(&config)),
        Command::Synth { dataset, out, seed, per_class_train, per_class_test, side } => {
            synth::cmd_synth(&synth::SynthArgs {
                dataset: *dataset,
                out: out.clone(),
                seed: *seed,
                per_class_train: *per_class_train,
                per_class_test: *per_class_test,
                side: *side,
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
