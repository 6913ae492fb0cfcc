//! `plab` — experiment harness for the particle-system laboratory.
//!
//! Subcommands orchestrate the solver → sampler → analysis pipelines from a
//! single TOML configuration, writing deterministic artifacts plus a
//! manifest that `reproduce` can replay and byte-compare.

mod artifacts;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use crate::artifacts::Workspace;
use crate::config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "plab",
    version,
    about = "Gibbs-measure laboratory: solvers, sampler, and point-process analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Path to the experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `output.directory`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed override (recorded in the effective config copy).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the kernel's admissibility (evenness, positivity, transform).
    ValidateKernel,
    /// Solve the zero-temperature equilibrium density on the config grid.
    SolveEquilibrium,
    /// Solve the thermal fixed point for every scheduled temperature.
    SolveThermal,
    /// Run the Metropolis sampler and dump retained configurations.
    Sample,
    /// Compute statistics and bound checks from recorded samples.
    Analyze,
    /// Run the full local-Poisson convergence sweep over N.
    Sweep,
    /// Verify the exact identities (splitting, duality, mass bound).
    VerifyIdentities,
    /// Re-run a recorded directory and byte-compare every artifact.
    Reproduce,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ValidateKernel => "validate-kernel",
            Command::SolveEquilibrium => "solve-equilibrium",
            Command::SolveThermal => "solve-thermal",
            Command::Sample => "sample",
            Command::Analyze => "analyze",
            Command::Sweep => "sweep",
            Command::VerifyIdentities => "verify-identities",
            Command::Reproduce => "reproduce",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Ignore the error if a pool already exists (e.g. repeated init in
        // tests); determinism does not depend on the thread count.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns Ok(true) when all requested verifications pass.
fn run(cli: Cli) -> Result<bool> {
    if let Command::Reproduce = cli.command {
        let dir = reproduce_dir(&cli)?;
        pipeline::reproduce(&dir)?;
        println!("reproduce: all artifacts in {} match byte-for-byte", dir.display());
        return Ok(true);
    }

    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("--config <path> is required for this subcommand"))?;
    let mut config = ExperimentConfig::from_path(config_path)?;
    if let Some(seed) = cli.seed {
        config.chains.seed = seed;
    }
    let exp = config.validate()?;
    for warning in &exp.warnings {
        eprintln!("warning: {warning}");
    }

    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&exp.config.output.directory));
    let canonical = exp.config.canonical_toml()?;
    let mut ws = Workspace::open(&out_dir, &exp.config_hash, &canonical)?;

    let name = cli.command.name();
    let failures = pipeline::run_subcommand(name, &exp, &mut ws)
        .with_context(|| format!("subcommand {name} failed"))?;
    if failures.is_empty() {
        println!("{name}: ok ({} artifacts in {})", ws.manifest().artifacts.len(), out_dir.display());
        Ok(true)
    } else {
        eprintln!("{name}: {} verification failure(s); see failures.json", failures.len());
        for failure in &failures {
            eprintln!("  [{}] {}", failure.check, failure.detail);
        }
        Ok(false)
    }
}

/// `reproduce` takes the run directory from --out, or from the config's
/// output section when --config is given.
fn reproduce_dir(cli: &Cli) -> Result<PathBuf> {
    if let Some(out) = &cli.out {
        return Ok(out.clone());
    }
    if let Some(config_path) = &cli.config {
        let config = ExperimentConfig::from_path(config_path)?;
        return Ok(PathBuf::from(config.output.directory));
    }
    Err(anyhow!("reproduce needs --out <dir> (or --config to read the recorded output directory)"))
}
