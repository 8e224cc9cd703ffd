//! `ibclab`: runs the configured experiments and prints a pass/fail summary.
//!
//! The exit status is 0 iff every check of the run passed, 1 if a check failed
//! and 2 on configuration or runtime errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ibc_core::experiments::{self, ExperimentConfig, ExperimentReport, CONFIG_SCHEMA};

#[derive(Parser)]
#[command(name = "ibclab", version, about = "Interior-boundary-condition experiments")]
struct Cli {
    /// Print the configuration schema and exit.
    #[arg(long)]
    print_schema: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Lowest eigenpairs on one grid.
    Ground(Common),
    /// Ground energy and boson statistics over a grid ladder, extrapolated.
    GridSweep(Common),
    /// Crank–Nicolson evolution from the bare vacuum with flux bookkeeping.
    Evolve(Common),
    /// Hermiticity of sampled Robin boundary parameters.
    RobinAudit(Common),
    /// Shell-cutoff ground energies approaching the point source.
    ShellSweep(Common),
    /// Smeared-source spectra against the point source.
    RenormSweep(Common),
    /// Closed-form two-source ground state and pair potential.
    TwoCenter(Common),
    /// Write the assembled matrix as `row col re im` lines.
    ExportMatrix(Common),
    /// Print the configuration schema.
    PrintSchema,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; missing keys take the experiment's standard values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV and JSON files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Seed for start vectors and sampling.
    #[arg(long)]
    seed: Option<u64>,
}

fn load(name: &str, common: &Common) -> ibc_core::Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            // an explicit config without an experiment key runs the subcommand
            let with_name = if text.lines().any(|l| l.trim_start().starts_with("experiment")) {
                text
            } else {
                format!("experiment = \"{name}\"\n{text}")
            };
            let parsed: toml::Value = toml::from_str(&with_name).map_err(|e| ibc_core::Error::Config(e.to_string()))?;
            let standard = toml::Value::try_from(ExperimentConfig::standard(name)?)
                .map_err(|e| ibc_core::Error::Config(e.to_string()))?;
            let merged = merge(standard, parsed);
            ExperimentConfig::from_toml(&toml::to_string(&merged).map_err(|e| ibc_core::Error::Config(e.to_string()))?)?
        }
        None => ExperimentConfig::standard(name)?,
    };
    if config.experiment != name {
        return Err(ibc_core::Error::Config(format!(
            "config names experiment `{}` but subcommand is `{name}`",
            config.experiment
        )));
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Overlays `top` onto `base`, table by table.
fn merge(base: toml::Value, top: toml::Value) -> toml::Value {
    match (base, top) {
        (toml::Value::Table(mut base), toml::Value::Table(top)) => {
            for (key, value) in top {
                let merged = match base.remove(&key) {
                    Some(existing) if key != "hamiltonian" => merge(existing, value),
                    _ => value,
                };
                base.insert(key, merged);
            }
            toml::Value::Table(base)
        }
        (_, top) => top,
    }
}

fn print_report(report: &ExperimentReport) {
    for note in &report.notes {
        println!("note: {note}");
    }
    for (key, value) in &report.summary {
        println!("{key} = {value:.10e}");
    }
    for check in &report.checks {
        println!(
            "{} {}: measured {:.10e}, oracle {:.10e} ({}), tolerance {:.3e}",
            if check.pass { "PASS" } else { "FAIL" },
            check.name,
            check.measured,
            check.oracle,
            check.oracle_source,
            check.tolerance
        );
    }
    for file in &report.files {
        println!("wrote {file}");
    }
    println!("{}: {}", report.experiment, if report.passed { "all checks passed" } else { "some checks failed" });
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.print_schema {
        print!("{CONFIG_SCHEMA}");
        return ExitCode::SUCCESS;
    }
    let (name, common) = match &cli.command {
        None => {
            eprintln!("no subcommand given; see --help");
            return ExitCode::from(2);
        }
        Some(Command::PrintSchema) => {
            print!("{CONFIG_SCHEMA}");
            return ExitCode::SUCCESS;
        }
        Some(Command::Ground(c)) => ("ground", c),
        Some(Command::GridSweep(c)) => ("grid-sweep", c),
        Some(Command::Evolve(c)) => ("evolve", c),
        Some(Command::RobinAudit(c)) => ("robin-audit", c),
        Some(Command::ShellSweep(c)) => ("shell-sweep", c),
        Some(Command::RenormSweep(c)) => ("renorm-sweep", c),
        Some(Command::TwoCenter(c)) => ("two-center", c),
        Some(Command::ExportMatrix(c)) => ("export-matrix", c),
    };
    if let Some(jobs) = common.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = load(name, common).and_then(|config| {
        let out = experiments::output_dir(&config, common.out.clone());
        experiments::run(&config, out.as_deref())
    });
    match result {
        Ok(report) => {
            print_report(&report);
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
