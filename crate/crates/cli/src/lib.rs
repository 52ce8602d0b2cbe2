//! Experiment runner for the spikelab workbench: TOML configs in, CSV and
//! JSON results out.

pub mod config;
pub mod fetch;
pub mod output;
pub mod run;

use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, Mode, Problem};
pub use run::{run, RunReport};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "SPIKELAB_OUT_DIR";

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] spikelab_core::Error),

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("data: {0}")]
    Data(String),

    #[error("download failed: {0}")]
    Download(String),
}

impl RunError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        RunError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// Output directory by precedence: flag, environment, config, `./out`.
pub fn resolve_out_dir(flag: Option<&Path>, env: Option<&str>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(e) = env.filter(|e| !e.is_empty()) {
        return PathBuf::from(e);
    }
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

/// Loads, applies the seed override and runs; returns the process exit code.
pub fn run_config_file(path: &Path, out: Option<&Path>, seed: Option<u64>) -> u8 {
    let mut cfg = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(problems) => {
            for p in &problems {
                eprintln!("config error: {p}");
            }
            return EXIT_CONFIG;
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let env = std::env::var(OUT_DIR_ENV).ok();
    let dir = resolve_out_dir(out, env.as_deref(), &cfg);
    match run(&cfg, &dir) {
        Ok(_) => {
            println!("results written to {}", dir.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            eprintln!("partial results kept in {}", dir.display());
            EXIT_RUNTIME
        }
    }
}
