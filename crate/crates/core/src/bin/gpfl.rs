use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gpfl::cli::{exit_code, output_dir, run_to_dir, split_values, sweep_to_dir};
use gpfl::config::RunConfig;

#[derive(Parser)]
#[command(name = "gpfl", version, about = "Over-the-air federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method and seed of a config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a config once per value of one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted key such as `gp.window`, or an alias: r, sigma_scale, tau.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config } => RunConfig::load(&config).and_then(|cfg| {
            let dir = output_dir(&cfg);
            run_to_dir(&cfg, &dir).map(|_| println!("wrote {}", dir.display()))
        }),
        Command::Sweep { config, param, values } => RunConfig::load(&config).and_then(|cfg| {
            let values = split_values(&values)?;
            let dir = output_dir(&cfg);
            sweep_to_dir(&cfg, &param, &values, &dir).map(|_| println!("wrote {}", dir.join("summary.csv").display()))
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
