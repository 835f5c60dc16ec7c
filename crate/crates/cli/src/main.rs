use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};

use nnsym_cli::config::{Overrides, Subcommand};

#[derive(Parser)]
#[command(
    name = "nnsym",
    version,
    about = "Symmetry experiments on neural network ensembles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Output-symmetry deviation report over width and order grids
    CheckSymmetry(RunArgs),
    /// Higher-point functions against Wick contractions across widths
    GpLimit(RunArgs),
    /// Correlators at shifted inputs for T-layer networks
    TranslateCheck(RunArgs),
    /// SU(D) selection rules and invariance of complex networks
    SuCheck(RunArgs),
    /// Ward identity sums with and without symmetry breaking
    Ward(RunArgs),
    /// Ensemble neural tangent kernel and Jacobian check
    Ntk(RunArgs),
    /// Training grid over broken rows and weight means
    TrainGrid(RunArgs),
    /// One-cold training across weight means with every row broken
    TrainOnecold(RunArgs),
    /// Symmetry of ensembles trained with invariant and MSE losses
    FlowCheck(RunArgs),
    /// First-order 2-pt function with a quartic weight prior
    Perturbative(RunArgs),
    /// Re-run the config recorded in a manifest
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    samples: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (sub, args) = match cli.command {
        Command::CheckSymmetry(a) => (Subcommand::CheckSymmetry, a),
        Command::GpLimit(a) => (Subcommand::GpLimit, a),
        Command::TranslateCheck(a) => (Subcommand::TranslateCheck, a),
        Command::SuCheck(a) => (Subcommand::SuCheck, a),
        Command::Ward(a) => (Subcommand::Ward, a),
        Command::Ntk(a) => (Subcommand::Ntk, a),
        Command::TrainGrid(a) => (Subcommand::TrainGrid, a),
        Command::TrainOnecold(a) => (Subcommand::TrainOnecold, a),
        Command::FlowCheck(a) => (Subcommand::FlowCheck, a),
        Command::Perturbative(a) => (Subcommand::Perturbative, a),
        Command::Replay {
            manifest,
            workers,
            out,
        } => return report(nnsym_cli::replay(&manifest, workers, &out)),
    };
    let overrides = Overrides {
        seed: args.seed,
        samples: args.samples,
    };
    let workers = args
        .workers
        .unwrap_or_else(nnsym::mc::default_workers)
        .max(1);
    report(nnsym_cli::execute(
        sub,
        args.config.as_deref(),
        &overrides,
        workers,
        &args.out,
    ))
}

fn report(result: anyhow::Result<Vec<PathBuf>>) -> ExitCode {
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
