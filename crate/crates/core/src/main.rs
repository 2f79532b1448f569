use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nzlab::harness::config::{ExperimentConfig, OutputFormat};
use nzlab::harness::experiments::{evaluate, EXPERIMENTS};
use nzlab::harness::{exit_code, run_records, write_records};
use nzlab::Error;

#[derive(Parser)]
#[command(name = "nzlab", about = "Weak-coupling limit experiments on finite open quantum systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; the built-in reference config when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output directory (overrides output.dir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
    /// evaluate acceptance thresholds; exit 5 on failure
    #[arg(long, global = true)]
    check: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// exact vs master-equation trace distance over the λ sweep
    Converge,
    /// norm of the initial-correlation term
    Correlation,
    /// kernel growth with the selected reference state
    Secular,
    /// weak-sense Q-part against the observable battery
    Factorize,
    /// λ = 0 decay of initial correlations
    Free,
    /// Gaussian-bath, sector and projection oracles
    Appendix,
    /// every experiment above
    All,
}

impl Command {
    fn names(self) -> Vec<&'static str> {
        match self {
            Command::Converge => vec!["converge"],
            Command::Correlation => vec!["correlation"],
            Command::Secular => vec!["secular"],
            Command::Factorize => vec!["factorize"],
            Command::Free => vec!["free"],
            Command::Appendix => vec!["appendix"],
            Command::All => EXPERIMENTS.to_vec(),
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("{}: {io}", p.display())),
            other => other,
        })?,
        None => ExperimentConfig::reference(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(f) = cli.format {
        cfg.output.format = f;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e) as u8);
        }
    };
    let mut failed = false;
    for name in cli.command.names() {
        let recs = match run_records(name, &cfg, cli.workers) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error in {name}: {e}");
                return ExitCode::from(exit_code(&e) as u8);
            }
        };
        match write_records(cfg.output.dir.as_ref(), name, &recs, cfg.output.format) {
            Ok(p) => eprintln!("{name}: {} records -> {}", recs.len(), p.display()),
            Err(e) => {
                eprintln!("error writing {name}: {e}");
                return ExitCode::from(exit_code(&e) as u8);
            }
        }
        if cli.check {
            match evaluate(name, &cfg, &recs) {
                Ok(checks) => {
                    for c in checks {
                        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
                        failed |= !c.pass;
                    }
                }
                Err(e) => {
                    eprintln!("error checking {name}: {e}");
                    return ExitCode::from(exit_code(&e) as u8);
                }
            }
        }
    }
    if failed {
        ExitCode::from(5)
    } else {
        ExitCode::SUCCESS
    }
}
