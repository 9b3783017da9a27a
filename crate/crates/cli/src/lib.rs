//! Experiment orchestration for the `torus-clt` library: configs, subcommands and artifacts.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod suite;

use std::path::Path;

pub use config::ExperimentConfig;
pub use error::CliError;
use output::{Artifacts, ManifestEntry};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Invariant,
    Poisson,
    Simulate,
    Clt,
    WassersteinRate,
    Entropy,
    /// Every experiment of the config followed by the acceptance suite.
    All,
}

/// Runs `command` and writes its artifacts, the resolved config and `manifest.json` under `out`.
pub fn run(command: Command, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    cfg.validate()?;
    if command == Command::WassersteinRate {
        cfg.validate_rate()?;
    }
    let mut art = Artifacts::create(out)?;
    art.text("config.resolved.json", &(cfg.to_json() + "\n"))?;
    match command {
        Command::Invariant => drop(experiments::invariant(cfg, &mut art, "invariant")?),
        Command::Poisson => drop(experiments::poisson(cfg, &mut art, "poisson")?),
        Command::Simulate => drop(experiments::simulate(cfg, &mut art, "simulate")?),
        Command::Clt => drop(experiments::clt(cfg, &mut art, "clt")?),
        Command::WassersteinRate => drop(experiments::wasserstein_rate(cfg, &mut art, "wasserstein")?),
        Command::Entropy => drop(experiments::entropy(cfg, &mut art, "entropy")?),
        Command::All => {
            experiments::invariant(cfg, &mut art, "invariant")?;
            experiments::poisson(cfg, &mut art, "poisson")?;
            experiments::simulate(cfg, &mut art, "simulate")?;
            experiments::clt(cfg, &mut art, "clt")?;
            if cfg.dim() <= 3 {
                experiments::wasserstein_rate(cfg, &mut art, "wasserstein")?;
            }
            experiments::entropy(cfg, &mut art, "entropy")?;
            let verdicts = suite::run_suite(cfg.seeds.master, cfg.suite.quick)?;
            suite::write_suite(&verdicts, cfg.suite.quick, &mut art, "acceptance")?;
        }
    }
    art.finish()
}
