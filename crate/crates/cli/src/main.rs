use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod settings;

use settings::UsageError;

#[derive(Parser)]
#[command(name = "adnet", version, about = "Multi-frame HDR reconstruction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus `key=value` overrides, shared by most commands.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// key = value config file; a run manifest works too
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic bracketed scenes with ground truth
    Synth(commands::SynthArgs),
    /// Train a model on a directory of scenes
    Train(commands::TrainArgs),
    /// Reconstruct the HDR image of one scene
    Infer(commands::InferArgs),
    /// PSNR-l and PSNR-mu of a result against ground truth
    Eval(commands::EvalArgs),
    /// Check analytic gradients against central differences
    Gradcheck(commands::GradcheckArgs),
    /// Train and score the four architecture variants
    Ablate(commands::AblateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
