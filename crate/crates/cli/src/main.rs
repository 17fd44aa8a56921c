mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

/// Spectral simulator and estimate laboratory for cubic NLS with a partial harmonic potential.
#[derive(Debug, Parser)]
#[command(name = "phnls", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for random data; overrides `simulation.seed` and `sweep.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print a machine-readable summary on standard output.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fast invariant suite.
    Selftest {
        #[arg(long, hide = true)]
        corrupt_quadrature: bool,
    },
    /// Run the split-step integrator and write the trajectory and observables.
    Simulate,
    /// Run one estimate experiment.
    Verify {
        name: Estimate,
        /// Exit 0 on an inconclusive verdict.
        #[arg(long)]
        allow_inconclusive: bool,
    },
    /// Track Sobolev-norm growth.
    Growth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Estimate {
    Strichartz,
    Bernstein,
    BilinearH1,
    BilinearL2,
    BilinearBourgain,
    AlmostOrth,
    Trilinear,
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAIL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    let mut cfg = match config::load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.simulation.seed = seed;
        cfg.sweep.seed = seed;
    }
    let result = match cli.command {
        Command::Selftest { corrupt_quadrature } => commands::selftest(corrupt_quadrature),
        Command::Simulate => commands::simulate(&cfg),
        Command::Verify { name, allow_inconclusive } => {
            cfg.estimates.allow_inconclusive |= allow_inconclusive;
            commands::verify(name, &cfg)
        }
        Command::Growth => commands::growth(&cfg),
    };
    match result {
        Ok(outcome) => {
            if cli.json {
                println!("{}", serde_json::to_string(&outcome.summary).expect("summary serializes"));
            } else {
                for line in &outcome.lines {
                    println!("{line}");
                }
            }
            ExitCode::from(outcome.code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            if cli.json {
                let v = serde_json::json!({ "status": "error", "error": e.kind, "message": e.message });
                println!("{v}");
            }
            ExitCode::from(e.code)
        }
    }
}
