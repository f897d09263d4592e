use std::path::PathBuf;
use std::process::ExitCode;

use bsd_core::config::{RunConfig, PRESETS};
use bsd_core::run::{analyze, eval, export_features, load_sweep, train};
use bsd_core::train::METRICS_HEADER;
use bsd_core::Result;
use clap::{Parser, Subcommand};

/// Train and evaluate bidirectional spike-based distillation networks.
#[derive(Parser)]
#[command(name = "bsd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file and/or a preset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Preset name; shorthand for `--set preset=<name>`.
        #[arg(long)]
        preset: Option<String>,
        /// `key=value` overrides, e.g. `loss.lambda=0.3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Print the resolved config and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Evaluate a run's checkpoint and print one metrics row.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "last")]
        checkpoint: String,
    },
    /// Run a parameter sweep described by a TOML file.
    Analyze {
        #[arg(long)]
        sweep: PathBuf,
    },
    /// Dump one population's time-averaged voltages for the probe set.
    ExportFeatures {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        layer: usize,
    },
    /// List the built-in presets.
    Presets,
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            preset,
            mut sets,
            dry_run,
        } => {
            if let Some(p) = preset {
                sets.insert(0, format!("preset={p:?}"));
            }
            let cfg = match config {
                Some(path) => RunConfig::load(&path, &sets)?,
                None => RunConfig::resolve("", &sets)?,
            };
            if dry_run {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let summary = train(&cfg)?;
            println!("run directory: {}", cfg.output_dir);
            for (k, v) in &summary.final_metrics {
                println!("{k}: {v:.6}");
            }
            if let Some(b) = summary.baseline {
                println!("baseline: {b:.6}");
            }
            if summary.rate_alarms > 0 {
                eprintln!(
                    "warning: hidden firing rates left the expected band in {} epoch(s)",
                    summary.rate_alarms
                );
            }
            println!("wall seconds: {:.1}", summary.wall_seconds);
        }
        Command::Eval { run, split, checkpoint } => {
            let row = eval(&run, &split, &checkpoint)?;
            println!("{METRICS_HEADER}\n{}", row.to_csv());
        }
        Command::Analyze { sweep } => {
            let spec = load_sweep(&sweep)?;
            for row in analyze(&spec)? {
                let metric = row.last.accuracy.or(row.last.mse).unwrap_or(f64::NAN);
                println!("{}={}: {metric:.6}", spec.key, row.value);
            }
            println!("sweep table: {}/sweep.csv", spec.output_dir);
        }
        Command::ExportFeatures { run, layer } => {
            let (path, [rows, cols]) = export_features(&run, layer)?;
            println!("{} ({rows} x {cols})", path.display());
        }
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
