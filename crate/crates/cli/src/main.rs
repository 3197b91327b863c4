use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gaussian_retro::scenarios::{builtin, builtin_names, run_scenario, validate_config, ScenarioConfig};
use gaussian_retro::Error;

#[derive(Parser)]
#[command(name = "gretro", version, about = "Forward/backward Gaussian filtering and past quadrature distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write CSV/JSON outputs.
    Run {
        #[command(flatten)]
        source: Source,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// List the builtin scenarios.
    ListBuiltins,
    /// Check a config without running it.
    Validate {
        #[command(flatten)]
        source: Source,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    builtin: Option<String>,
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Invalid(msg),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

/// Loads the config and the directory that relative record paths refer to.
fn load(source: &Source) -> Result<(ScenarioConfig, PathBuf), Failure> {
    if let Some(path) = &source.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
        let cfg = ScenarioConfig::from_toml_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    } else {
        let name = source.builtin.as_deref().unwrap_or_default();
        Ok((builtin(name)?, PathBuf::from(".")))
    }
}

fn check(cfg: &ScenarioConfig) -> Result<(), Failure> {
    validate_config(cfg).map_err(|issues| {
        let lines: Vec<String> = issues.iter().map(|i| format!("  {i}")).collect();
        Failure::Invalid(format!("{} problem(s):\n{}", issues.len(), lines.join("\n")))
    })
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::ListBuiltins => {
            for name in builtin_names() {
                let cfg = builtin(name)?;
                println!("{name:<12} {}", cfg.description);
            }
        }
        Command::Validate { source } => {
            let (cfg, _) = load(&source)?;
            check(&cfg)?;
            println!("{}: ok", cfg.name);
        }
        Command::Run { source, seed, out } => {
            let (mut cfg, base) = load(&source)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            check(&cfg)?;
            let res = run_scenario(&cfg, &out, &base)?;
            println!("{}: {} steps, outputs in {}", cfg.name, res.forward.grid().steps(), out.display());
            if let Some(err) = res.analytic_max_rel_error() {
                println!("max relative deviation from closed form: {err:.3e}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("invalid config: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
