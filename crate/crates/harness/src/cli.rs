//! `gibo run | describe | export-objective`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use hci_gibo::synth::{WithinModelObjective, WithinModelSpec};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::HarnessError;
use crate::suite::run_suite;

#[derive(Debug, Parser)]
#[command(name = "gibo", version, about = "Run local Bayesian optimization benchmark suites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute every planned run and write results.csv, summary.json and manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print the resolved run plan.
    Describe {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a within-model objective as JSON.
    ExportObjective {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        gap_amplitude: f64,
    },
}

#[derive(Serialize)]
struct ExportedObjective<'a> {
    spec: &'a WithinModelSpec,
    lipschitz: f64,
    reference_range: (f64, f64),
    anchors: &'a [Vec<f64>],
    values_f: &'a [f64],
    values_gap: &'a [f64],
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { config, out, jobs } => {
            if jobs == 0 {
                return Err(HarnessError::Validation {
                    path: "--jobs".into(),
                    message: "must be positive".into(),
                });
            }
            let cfg = ExperimentConfig::load(&config)?;
            let summary = run_suite(&cfg, &out, jobs)?;
            println!(
                "{} runs ({} failed) written to {}",
                summary.runs_planned,
                summary.runs_failed,
                out.display()
            );
            for f in &summary.failures {
                eprintln!("run {} failed: {}", f.run_id, f.error);
            }
            Ok(())
        }
        Command::Describe { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let plan = cfg.plan();
            println!(
                "suite {}  budget {}  noise_std {}  {} planned run{}",
                cfg.suite.as_str(),
                cfg.budget_real,
                cfg.noise_std(),
                plan.len(),
                if plan.len() == 1 { "" } else { "s" }
            );
            for run in plan {
                println!("{run}");
            }
            Ok(())
        }
        Command::ExportObjective {
            seed,
            dim,
            out,
            gap_amplitude,
        } => {
            let invalid = |e: hci_gibo::Error| HarnessError::Validation {
                path: "--dim".into(),
                message: e.to_string(),
            };
            if dim == 0 {
                return Err(invalid(hci_gibo::Error::InvalidArgument("dim must be positive".into())));
            }
            let spec = WithinModelSpec::standard(dim, seed, gap_amplitude).map_err(invalid)?;
            let objective = WithinModelObjective::new(spec).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            let exported = ExportedObjective {
                spec: objective.spec(),
                lipschitz: objective.lipschitz(),
                reference_range: hci_gibo::synth::Objective::reference_range(&objective),
                anchors: objective.anchors(),
                values_f: objective.values_f(),
                values_gap: objective.values_gap(),
            };
            let text = serde_json::to_string(&exported).expect("objective serializes to JSON");
            std::fs::write(&out, text)
                .map_err(|e| HarnessError::io(format!("cannot write {}", out.display()), e))?;
            println!("objective dim {dim} seed {seed} written to {}", out.display());
            Ok(())
        }
    }
}
