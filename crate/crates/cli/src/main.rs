use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use imukey_cli::attack::AttackArgs;
use imukey_cli::energy::EnergyArgs;
use imukey_cli::gen::GenArgs;
use imukey_cli::plot::PlotArgs;
use imukey_cli::train::TrainArgs;
use imukey_cli::{cmd_enum_apl, cmd_gradcheck, CliError};

/// Motion-side password inference bench: synthesize wrist IMU data,
/// train sequence models, and measure attack accuracy and sensing
/// energy.
#[derive(Parser)]
#[command(name = "imukey", version, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled IMU dataset from a config file.
    Gen {
        /// Key-value config controlling users, passwords, and noise.
        #[arg(long)]
        config: PathBuf,
        /// Output JSONL path; a manifest lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a sequence model on a generated dataset.
    Train {
        /// Model kind: seq2pwd or seq2dgt.
        #[arg(long)]
        model: String,
        /// Training dataset (JSONL from `gen`).
        #[arg(long)]
        data: PathBuf,
        /// Key-value config with training hyperparameters.
        #[arg(long)]
        config: PathBuf,
        /// Output model JSON path.
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Keep only episodes recorded on this device profile.
        #[arg(long)]
        train_device: Option<String>,
    },
    /// Rank password guesses on held-out data and report accuracy@k.
    Attack {
        /// Trained model JSON from `train`.
        #[arg(long)]
        model: PathBuf,
        /// Evaluation dataset (JSONL from `gen`).
        #[arg(long)]
        data: PathBuf,
        /// Report the accuracy curve up to this rank.
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// Output report JSON path; a CSV lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// Keep only episodes recorded on this device profile.
        #[arg(long)]
        test_device: Option<String>,
    },
    /// Compare constant-rate and adaptive sensing on the same episodes.
    Energy {
        /// Trained model JSON from `train`.
        #[arg(long)]
        model: PathBuf,
        /// Episode dataset (JSONL from `gen`, style=episode).
        #[arg(long)]
        data: PathBuf,
        /// Key-value config with cost rows and detector knobs.
        #[arg(long)]
        config: PathBuf,
        /// Output report JSON path.
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Count valid unlock patterns.
    EnumApl {
        /// Print one row per pattern length instead of the bare total.
        #[arg(long)]
        per_length: bool,
    },
    /// Verify analytic gradients against central differences.
    Gradcheck {
        /// Model kind: seq2pwd, seq2dgt, or both.
        #[arg(long, default_value = "both")]
        kind: String,
        /// Inject a deliberate gradient bug; the check must flag it.
        #[arg(long)]
        fault: bool,
    },
    /// Render a report CSV as a standalone SVG.
    Plot {
        /// Input CSV (from `attack` or hand-rolled).
        #[arg(long)]
        data: PathBuf,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { config, out, seed } => imukey_cli::gen::run(&GenArgs { config, out, seed }),
        Command::Train {
            model,
            data,
            config,
            out,
            seed,
            train_device,
        } => imukey_cli::train::run(&TrainArgs {
            model,
            data,
            config,
            out,
            seed,
            train_device,
        }),
        Command::Attack {
            model,
            data,
            k,
            out,
            test_device,
        } => imukey_cli::attack::run(&AttackArgs {
            model,
            data,
            k,
            out,
            test_device,
        }),
        Command::Energy {
            model,
            data,
            config,
            out,
            seed,
        } => imukey_cli::energy::run(&EnergyArgs {
            model,
            data,
            config,
            out,
            seed,
        }),
        Command::EnumApl { per_length } => {
            print!("{}", cmd_enum_apl(per_length));
            Ok(())
        }
        Command::Gradcheck { kind, fault } => {
            let out = cmd_gradcheck(&kind, fault)?;
            print!("{out}");
            Ok(())
        }
        Command::Plot { data, out } => imukey_cli::plot::run(&PlotArgs { data, out }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
