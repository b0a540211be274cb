use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ibflab_cli::{parse_config, run, ConfigError, Experiment, RunError};

#[derive(Parser)]
#[command(name = "ibflab", version, about = "Isotropic Brownian flow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Covariance normalization, symmetry and moduli checks.
    CovCheck(Args),
    /// One-point diffusivity.
    Diffusivity(Args),
    /// Lyapunov exponents by QR renormalization.
    Lyapunov(Args),
    /// Stable norm from hitting times.
    StableNorm(Args),
    /// Shape inclusion probabilities.
    Shape(Args),
    /// Diameter persistence of a large curve.
    Persistence(Args),
    /// Distance between scaled trajectories and Lip(K).
    Support(Args),
    /// Linear speed under spatial rescaling.
    Scaling(Args),
    /// Every experiment configured in the file.
    Suite(Args),
    /// The experiment named by the config's `experiment` key.
    Run(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    strict: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ibflab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), RunError> {
    let (exp, args) = match command {
        Command::CovCheck(a) => (Some(Experiment::CovCheck), a),
        Command::Diffusivity(a) => (Some(Experiment::Diffusivity), a),
        Command::Lyapunov(a) => (Some(Experiment::Lyapunov), a),
        Command::StableNorm(a) => (Some(Experiment::StableNorm), a),
        Command::Shape(a) => (Some(Experiment::Shape), a),
        Command::Persistence(a) => (Some(Experiment::Persistence), a),
        Command::Support(a) => (Some(Experiment::Support), a),
        Command::Scaling(a) => (Some(Experiment::Scaling), a),
        Command::Suite(a) => (Some(Experiment::Suite), a),
        Command::Run(a) => (None, a),
    };
    let text = std::fs::read_to_string(&args.config).map_err(|e| ConfigError::Invalid {
        key: "--config".into(),
        reason: format!("{}: {e}", args.config.display()),
    })?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    let exp = exp.or(cfg.experiment).ok_or_else(|| ConfigError::Invalid {
        key: "experiment".into(),
        reason: "required by the run subcommand".into(),
    })?;
    let out = match (args.out, &cfg.output_dir) {
        (Some(o), _) => o,
        (None, Some(o)) => o.clone(),
        (None, None) => {
            return Err(ConfigError::Invalid {
                key: "output_dir".into(),
                reason: "set output_dir or pass --out".into(),
            }
            .into())
        }
    };
    cfg.output_dir = Some(out.clone());
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ConfigError::Invalid {
                key: "--threads".into(),
                reason: e.to_string(),
            })?;
    }
    let summary = run(&cfg, exp, &out, args.strict)?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    let failed: Vec<_> = summary.checks.iter().filter(|c| !c.pass).collect();
    for c in &summary.checks {
        println!(
            "{:<12} {:<22} {:>12.5e} (threshold {:.3e}) {}",
            c.experiment,
            c.name,
            c.value,
            c.threshold,
            if c.pass { "pass" } else { "FAIL" }
        );
    }
    if !failed.is_empty() {
        eprintln!("{} check(s) failed", failed.len());
    }
    Ok(())
}
