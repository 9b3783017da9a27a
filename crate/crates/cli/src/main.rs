use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use torus_clt_cli::{run, CliError, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "torus-clt", version, about = "Occupation-measure limit experiments for periodic diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON experiment config; defaults apply to every missing field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding `seeds.master`.
    #[arg(long, global = true, env = "TORUS_CLT_SEED")]
    seed: Option<u64>,
    /// Output directory, overriding `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (all cores when absent).
    #[arg(long, global = true, env = "TORUS_CLT_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Solve L*μ = 0 and write the density.
    Invariant,
    /// Solve Lu = f for each test function.
    Poisson,
    /// Simulate one path and its occupation histogram.
    Simulate,
    /// Empirical-process marginals against the Gaussian limit.
    Clt,
    /// W₁(μ̂_T, μ) over a horizon grid and its log-log slope.
    WassersteinRate,
    /// Covering numbers, exponent fit, Dudley and Sudakov checks.
    Entropy,
    /// All experiments plus the acceptance suite.
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds.master = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.directory = out.display().to_string();
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config { path: "--threads".into(), message: "must be at least 1".into() });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config { path: "--threads".into(), message: e.to_string() })?;
    }
    let command = match cli.command {
        Cmd::Invariant => Command::Invariant,
        Cmd::Poisson => Command::Poisson,
        Cmd::Simulate => Command::Simulate,
        Cmd::Clt => Command::Clt,
        Cmd::WassersteinRate => Command::WassersteinRate,
        Cmd::Entropy => Command::Entropy,
        Cmd::All => Command::All,
    };
    let out = PathBuf::from(&cfg.output.directory);
    let files = run(command, &cfg, &out)?;
    println!("wrote {} files to {} (see manifest.json)", files.len() + 1, out.display());
    Ok(())
}
