//! `lagsel`: builds and verifies graph selectors and weak-KAM objects from a
//! run configuration.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::{Outcome, RunError};
use config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "lagsel", version, about = "Graph selectors and weak-KAM objects on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (sectioned key = value text).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; overrides `run.workers`.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for randomized steps; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Theorem suite for `verify`: selector, 1.3, 1.5 or 6.3.
    #[arg(long, global = true)]
    suite: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq)]
enum Command {
    /// Build and verify a graph selector.
    Selector,
    /// Dump the wavefront.
    Front,
    /// Critical value, weak KAM solution, Aubry and Mañé sets.
    Weakkam,
    /// Maximal invariant subset of the Lagrangian on an energy level.
    Invariant,
    /// Run a theorem suite.
    Verify,
    /// Re-parse artifacts and run the brute-force oracles.
    Oracle,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Selector => "selector",
            Command::Front => "front",
            Command::Weakkam => "weakkam",
            Command::Invariant => "invariant",
            Command::Verify => "verify",
            Command::Oracle => "oracle",
        }
    }
}

fn run(cli: &Cli) -> Result<(RunConfig, Outcome), RunError> {
    let path = cli.config.as_ref().ok_or_else(|| {
        RunError::Config(config::ConfigError::Field { field: "--config".into(), message: "required".into() })
    })?;
    let ov = Overrides { out: cli.out.clone(), workers: cli.workers, seed: cli.seed };
    let cfg = RunConfig::load(path, &ov)?;
    // a second initialization only happens in-process (tests); keep the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    let out = match cli.command {
        Command::Selector => commands::selector(&cfg)?,
        Command::Front => commands::front(&cfg)?,
        Command::Weakkam => commands::weakkam(&cfg)?,
        Command::Invariant => commands::invariant(&cfg)?,
        Command::Verify => commands::verify(&cfg, cli.suite.as_deref().unwrap_or("selector"))?,
        Command::Oracle => commands::oracle(&cfg)?,
    };
    Ok((cfg, out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let (cfg, out) = match run(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let pass = out.checks.iter().all(|c| c.pass);
    let suite = (cli.command == Command::Verify).then(|| cli.suite.clone().unwrap_or_else(|| "selector".into()));
    let summary = json!({
        "command": cli.command.name(),
        "suite": suite,
        "config_hash": cfg.hash(),
        "versions": { "lagsel": lagsel::VERSION, "lagsel-cli": env!("CARGO_PKG_VERSION") },
        "seed": cfg.seed,
        "pass": pass,
        "checks": out.checks,
        "results": out.results,
        "artifacts": out.artifacts,
    });
    let line = summary.to_string();
    let wall = start.elapsed().as_secs_f64();
    let written = std::fs::write(cfg.out.join("summary.jsonl"), format!("{line}\n")).and_then(|_| {
        std::fs::write(cfg.out.join("timing.json"), format!("{}\n", json!({ "wall_time_s": wall })))
    });
    if let Err(e) = written {
        eprintln!("error: {}: {e}", cfg.out.display());
        return ExitCode::from(1);
    }
    println!("{line}");
    let _ = std::io::stdout().flush();
    for c in out.checks.iter().filter(|c| !c.pass) {
        eprintln!("failed: {} = {:e} (tolerance {:e})", c.name, c.value, c.tol);
    }
    eprintln!("wall time {wall:.3} s");
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
