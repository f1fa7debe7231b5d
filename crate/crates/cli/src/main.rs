use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fan_cli::{parse_overrides, run_command, CliError, Command, RunConfig};

/// Action-neighborhood shaping experiments on a pick-and-place toy task.
#[derive(Parser)]
#[command(name = "fan", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Record expert demonstrations.
    CollectDemos(RunArgs),
    /// Supervised training from demonstrations.
    TrainSft(RunArgs),
    /// PPO fine-tuning from a warm start or a checkpoint.
    TrainPpo(RunArgs),
    /// Greedy evaluation on one or more variants, plus the FAN-existence audit.
    Eval(RunArgs),
    /// Check the tabular closed form against a brute-force oracle.
    VerifyProp1(RunArgs),
    /// Full method × seed × variant sweep.
    Experiment(RunArgs),
    /// Finite-difference gradient audits.
    Gradcheck(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as `--section.key value` or `--section.key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn run(cli: Cli) -> Result<String, CliError> {
    let (cmd, args) = match cli.command {
        Sub::CollectDemos(a) => (Command::CollectDemos, a),
        Sub::TrainSft(a) => (Command::TrainSft, a),
        Sub::TrainPpo(a) => (Command::TrainPpo, a),
        Sub::Eval(a) => (Command::Eval, a),
        Sub::VerifyProp1(a) => (Command::VerifyProp1, a),
        Sub::Experiment(a) => (Command::Experiment, a),
        Sub::Gradcheck(a) => (Command::Gradcheck, a),
    };
    let overrides = parse_overrides(&args.overrides)?;
    let cfg = RunConfig::resolve(args.config.as_deref(), &overrides)?;
    let out = run_command(cmd, &cfg)?;
    Ok(format!(
        "{}\noutputs in {}",
        out.summary,
        cfg.output_dir.display()
    ))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            eprintln!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
