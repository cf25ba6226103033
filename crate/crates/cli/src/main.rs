//! `scorelab`: config-driven experiments over the score-matching core.
//!
//! Verbs: `run` (named experiment from a preset or config file), `train`,
//! `sample`, `analyze`, `validate`. Exit codes: 0 success, 2 configuration
//! error, 3 numeric failure. `SCORELAB_THREADS` caps the worker pool.

mod config;
mod manifest;
mod run;
mod verbs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scorelab_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "scorelab", version, about = "score-matching laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment from a preset or a config file.
    Run {
        /// Built-in preset name (see --list).
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Path to a config JSON document.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// List available presets and exit.
        #[arg(long)]
        list: bool,
        /// Dotted-path overrides, e.g. --train.epochs=50 --m=1000.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Train a model per the config's model/train sections and write
    /// checkpoints plus a loss trace.
    Train {
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train method override: dsm or bsm.
        #[arg(long)]
        method: Option<String>,
        /// MLP architecture as comma-separated hidden widths, e.g. "10,10".
        #[arg(long)]
        arch: Option<String>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Draw reverse-process samples from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep every stride-th timestep (fast inference).
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// 1-based offset of the strided subset.
        #[arg(long, default_value_t = 1)]
        offset: usize,
        /// Integrator: exponential (default) or euler-maruyama.
        #[arg(long, default_value = "exponential")]
        integrator: String,
        /// Force the noise term to zero (deterministic recursion).
        #[arg(long)]
        zero_noise: bool,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Also write the flat binary layout next to the CSV.
        #[arg(long)]
        binary: bool,
    },
    /// Compare a checkpoint against the closed-form oracle.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config providing the target (and schedule for expected-l2).
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// What to compute: l2 | expected-l2 | martingale | kappa.
        #[arg(long, default_value = "l2")]
        what: String,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Validate a config document and print its normalized form.
    Validate {
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

/// Exit-code policy: 2 for anything wrong with inputs, 3 for numeric
/// trouble discovered while running.
fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::NumericFailure(_)
        | CoreError::SingularDesign { .. }
        | CoreError::IllConditioned(_)
        | CoreError::DegenerateEvaluation(_)
        | CoreError::UndefinedRatio(_) => 3,
        _ => 2,
    }
}

pub(crate) enum CliError {
    Config(Vec<String>),
    Core(CoreError),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(CoreError::Io(e))
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("SCORELAB_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        } else {
            eprintln!("error: SCORELAB_THREADS must be an integer, got {threads:?}");
            return ExitCode::from(2);
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { preset, config, out, list, overrides } => {
            verbs::run_verb(preset, config, out, list, overrides)
        }
        Command::Train { preset, config, out, method, arch, overrides } => {
            verbs::train_verb(preset, config, out, method, arch, overrides)
        }
        Command::Sample {
            checkpoint,
            n,
            seed,
            stride,
            offset,
            integrator,
            zero_noise,
            out,
            binary,
        } => verbs::sample_verb(
            checkpoint, n, seed, stride, offset, &integrator, zero_noise, out, binary,
        ),
        Command::Analyze { checkpoint, config, preset, what, format, out, overrides } => {
            verbs::analyze_verb(checkpoint, config, preset, &what, &format, out, overrides)
        }
        Command::Validate { preset, config, overrides } => {
            verbs::validate_verb(preset, config, overrides)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(errors)) => {
            for e in errors {
                eprintln!("config error: {e}");
            }
            ExitCode::from(2)
        }
        Err(CliError::Core(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
