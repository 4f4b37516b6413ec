use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pahi_lab::runner::{self, Subcommand as Cmd};

/// Noise-inversion experiment runner: pretrain, train shared (hi) or
/// prompt-adaptive (pahi) noise distributions against a frozen one-step
/// generator and scorer, evaluate win rates, and benchmark inference cost.
#[derive(Parser)]
#[command(name = "pahi-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for metrics, summaries, checkpoints, and images.
    /// The PAHI_LAB_OUT environment variable, when set, takes precedence.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path config overrides, e.g. --override hi.steps=500.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// KL + reconstruction pretraining of the noise predictor.
    Pretrain(RunArgs),
    /// Optimize one shared noise distribution across prompts.
    TrainHi(RunArgs),
    /// Pretrain (unless configured otherwise) and preference-train the
    /// prompt-adaptive noise predictor.
    TrainPahi(RunArgs),
    /// Win-rate evaluation of a candidate against the standard Gaussian.
    Eval(RunArgs),
    /// Inference-time comparison of plain vs predictor-augmented sampling.
    Bench(RunArgs),
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, String> {
    raw.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| format!("override '{s}' is not of the form key=value"))
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match &cli.command {
        Command::Pretrain(a) => (Cmd::Pretrain, a),
        Command::TrainHi(a) => (Cmd::TrainHi, a),
        Command::TrainPahi(a) => (Cmd::TrainPahi, a),
        Command::Eval(a) => (Cmd::Eval, a),
        Command::Bench(a) => (Cmd::Bench, a),
    };
    let overrides = match parse_overrides(&args.overrides) {
        Ok(o) => o,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let out_dir = std::env::var_os("PAHI_LAB_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| args.out.clone());

    match runner::run(cmd, &args.config, &out_dir, args.seed, &overrides) {
        Ok(artifacts) => {
            println!("wrote {}", artifacts.summary.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
