mod commands;
mod config;
mod dataset;
mod report;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "plpose",
    about = "Two-frame relative pose estimation from matched points and line segments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset of two-view match sets with exact ground truth
    Synth(commands::synth::SynthArgs),
    /// Train a model on a dataset directory
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint: per-pair angular errors and aggregates
    Eval(commands::eval::EvalArgs),
    /// Predict a sequence, accumulate trajectories, plot and report drift
    Traj(commands::traj::TrajArgs),
    /// Finite-difference audit of every parameter group's gradient
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Forward-latency benchmark over repeated runs
    Bench(commands::bench::BenchArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Traj(args) => commands::traj::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
        Command::Bench(args) => commands::bench::run(args),
    };
    if let Err(err) = result {
        // Single machine-parsable line; chained causes joined inline.
        let chain: Vec<String> = err.chain().map(|c| c.to_string()).collect();
        eprintln!("error: {}", chain.join(": "));
        std::process::exit(1);
    }
}
