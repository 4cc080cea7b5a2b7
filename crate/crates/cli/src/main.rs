use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spotkit::experiment::{self, Failure, Overrides, TuneOptions};

/// Hyperparameter tuning with sequential parameter optimization.
#[derive(Debug, Parser)]
#[command(name = "spotkit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a tuning experiment from a JSON config file.
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides SPOTKIT_SEED and the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Time budget in minutes.
        #[arg(long)]
        max_time: Option<f64>,
        #[arg(long)]
        fun_evals: Option<usize>,
        /// Stop after this many evaluations (the run can be resumed).
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Continue an interrupted experiment.
    Resume {
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the tuner with random search at equal budgets.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// `--seed` beats `SPOTKIT_SEED`, which beats the config file.
fn seed(flag: Option<u64>) -> Result<Option<u64>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("SPOTKIT_SEED") {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| {
            Failure::Config(spotkit::Error::InvalidConfig(format!(
                "SPOTKIT_SEED is not an unsigned integer: `{s}`"
            )))
        }),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Tune {
            config,
            out,
            seed: s,
            max_time,
            fun_evals,
            stop_after,
        } => {
            let options = TuneOptions {
                overrides: Overrides {
                    seed: seed(s)?,
                    max_time,
                    fun_evals,
                },
                stop_after,
            };
            experiment::tune(&config, &out, options, &mut stdout)?;
        }
        Command::Resume { out } => {
            if !out.is_dir() {
                return Err(Failure::Config(spotkit::Error::InvalidConfig(format!(
                    "output directory {} does not exist",
                    out.display()
                ))));
            }
            experiment::resume(&out, &mut stdout)?;
        }
        Command::Bench { config, reps, seed: s } => {
            let overrides = Overrides {
                seed: seed(s)?,
                ..Overrides::default()
            };
            let report = experiment::bench(&config, reps, overrides)?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Usage errors are configuration errors; help and version are not errors.
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("spotkit: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
