use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nodebias::config::AuditConfig;
use nodebias_cli::{execute, rerun, CliError, Command};

/// Audit training-node influence on the group bias of a graph classifier.
#[derive(Debug, Parser)]
#[command(name = "nodebias", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML configuration; unset fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config field, e.g. `--set model.epochs=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Root seed; every stage derives its own seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Influence-engine threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate the synthetic graph and its split.
    Gen,
    /// Train the classifier and report its metrics.
    Train,
    /// Score every training node.
    Audit,
    /// Estimated versus retrained bias change over node sets.
    Fidelity,
    /// Per-node cost of estimation versus retraining.
    Speedup,
    /// Distribution metrics versus rate-gap metrics over a deletion sweep.
    Consistency,
    /// Representation-change bound check under linear propagation.
    Prop1,
    /// Delete the most harmful training nodes and retrain.
    Debias,
    /// Re-execute a manifest and compare outputs byte for byte.
    Rerun {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
    },
}

fn effective_config(cli: &Cli) -> Result<AuditConfig, CliError> {
    let base = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            AuditConfig::from_toml_str(&text)?
        }
        None => AuditConfig::default(),
    };
    let mut config = base.with_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.influence.workers = workers;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let command = match &cli.command {
        Cmd::Rerun { manifest } => {
            print!("{}", rerun(manifest, &cli.out)?);
            println!("all deterministic outputs reproduced");
            return Ok(());
        }
        Cmd::Gen => Command::Gen,
        Cmd::Train => Command::Train,
        Cmd::Audit => Command::Audit,
        Cmd::Fidelity => Command::Fidelity,
        Cmd::Speedup => Command::Speedup,
        Cmd::Consistency => Command::Consistency,
        Cmd::Prop1 => Command::Prop1,
        Cmd::Debias => Command::Debias,
    };
    let config = effective_config(cli)?;
    let (manifest, summary) = execute(command, &config, &cli.out)?;
    print!("{summary}");
    println!("manifest = {}", manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
