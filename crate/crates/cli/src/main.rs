use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spikelab_cli::fetch::{fetch_mnist, MIRRORS};
use spikelab_cli::{run_config_file, ExperimentConfig, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME};

#[derive(Parser)]
#[command(name = "spikelab", version, about = "Run spiking-network learning-rule experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment a config describes.
    Run {
        config: PathBuf,
        /// Output directory (beats SPIKELAB_OUT_DIR and the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replaces the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Download the MNIST IDX files into a directory, verifying checksums.
    FetchMnist {
        dir: PathBuf,
        /// Base URL to try before the built-in mirrors.
        #[arg(long)]
        mirror: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out, seed } => run_config_file(&config, out.as_deref(), seed),
        Command::Validate { config } => match ExperimentConfig::load(&config) {
            Ok(_) => {
                println!("{}: ok", config.display());
                EXIT_OK
            }
            Err(problems) => {
                for p in &problems {
                    eprintln!("{p}");
                }
                EXIT_CONFIG
            }
        },
        Command::FetchMnist { dir, mirror } => {
            let mirrors: Vec<String> = mirror.into_iter().chain(MIRRORS.iter().map(|s| s.to_string())).collect();
            match fetch_mnist(&dir, &mirrors) {
                Ok(paths) => {
                    for p in paths {
                        println!("{}", p.display());
                    }
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("{e}");
                    EXIT_RUNTIME
                }
            }
        }
    };
    ExitCode::from(code)
}
