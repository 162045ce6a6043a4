use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use gbridge::{parse_config, run, Command};

/// Guided diffusion bridges on the flat torus and the Poincaré disk.
#[derive(Debug, Parser)]
#[command(name = "gbridge", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Simulate independent guided bridges.
    Bridge(RunArgs),
    /// Run a pCN chain on the driving noise of one bridge.
    Chain(RunArgs),
    /// Sample drift parameters from discrete observations.
    Gibbs(RunArgs),
    /// Simulate the forward diffusion and record observations.
    Forward(RunArgs),
    /// Check CSV files against the output schemas.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `[run] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `out/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("GBRIDGE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("GBRIDGE_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn execute(command: Command, args: &RunArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read {}", args.config.display()))?;
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(errors) => {
            eprintln!("{}: invalid configuration", args.config.display());
            for e in &errors.0 {
                eprintln!("  {e}");
            }
            return Ok(ExitCode::from(2));
        }
    };
    let base = args.config.parent().unwrap_or(Path::new("."));
    if let Err(errors) = cfg.resolve_files(base) {
        for e in &errors.0 {
            eprintln!("{}: {e}", args.config.display());
        }
        return Ok(ExitCode::from(2));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| gbridge::run::default_out(&cfg));
    let outcome = run(command, &cfg, &text, Some(&args.config), &out)?;
    println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
    eprintln!("wrote {} to {}", outcome.outputs.join(", "), out.display());
    Ok(ExitCode::SUCCESS)
}

fn validate(files: &[PathBuf]) -> ExitCode {
    let mut ok = true;
    for f in files {
        match guided_bridges::io::validate_file(f) {
            Ok(r) => println!("{}: {} ({} rows)", f.display(), r.schema.name(), r.rows),
            Err(e) => {
                ok = false;
                println!("{}: INVALID: {e}", f.display());
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Cmd::Bridge(a) => execute(Command::Bridge, a),
        Cmd::Chain(a) => execute(Command::Chain, a),
        Cmd::Gibbs(a) => execute(Command::Gibbs, a),
        Cmd::Forward(a) => execute(Command::Forward, a),
        Cmd::Validate { files } => Ok(validate(files)),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
