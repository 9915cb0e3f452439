use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};
use tradeoff_harness::acceptance::{run_criterion, verify, AcceptanceOptions, AcceptanceReport, Suite, CRITERIA};
use tradeoff_harness::config::{load, PRESETS};
use tradeoff_harness::plot::{parse_panels, render};
use tradeoff_harness::results::read_csv_file;
use tradeoff_harness::runner::{run_experiment, write_outputs};

#[derive(Parser)]
#[command(name = "tradeoff", about = "Generalization vs robustness of two-layer networks on quadratic targets")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a config file or preset and write CSV/JSON/SVG.
    Run {
        target: String,
        /// Output directory; overrides the config's output_dir.
        #[arg(long, env = "TRADEOFF_OUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Run the acceptance criteria.
    Verify {
        #[arg(long, default_value = "default")]
        suite: String,
        /// Multiplies every numerical tolerance.
        #[arg(long, default_value_t = 1.0)]
        tol_scale: f64,
        /// Replace theory predictions by zero (negative control).
        #[arg(long)]
        zero_theory: bool,
        /// Only these criteria (repeatable).
        #[arg(long = "criterion")]
        criteria: Vec<u8>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Plot rows from one or more CSV files.
    Plot {
        /// Comma-separated CSV paths; panels refer to them by index.
        csv: String,
        /// `REGIME[@source][|title],...`
        panels: String,
        #[arg(long, default_value = "plot.svg")]
        out: PathBuf,
        #[arg(long, default_value = "")]
        title: String,
    },
    /// List the presets.
    Presets,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Cmd) -> tradeoff_harness::error::Result<u8> {
    match cmd {
        Cmd::Run { target, out } => {
            let mut code = 0;
            for cfg in load(&target)? {
                let set = run_experiment(&cfg)?;
                let dir = out.clone().unwrap_or_else(|| cfg.output_dir.clone());
                for p in write_outputs(&set, &dir)? {
                    info!("wrote {}", p.display());
                }
                code = code.max(set.exit_code());
            }
            Ok(code as u8)
        }
        Cmd::Verify { suite, tol_scale, zero_theory, criteria, json } => {
            let suite = Suite::parse(&suite)
                .ok_or_else(|| tradeoff_harness::error::HarnessError::Invalid(format!("unknown suite {suite:?}")))?;
            let opts = AcceptanceOptions { suite, tolerance_scale: tol_scale, zero_theory };
            let report = if criteria.is_empty() {
                verify(&opts)
            } else {
                let ids: Vec<u8> = CRITERIA.iter().map(|c| c.0).filter(|id| criteria.contains(id)).collect();
                AcceptanceReport { options: opts, criteria: ids.into_iter().map(|id| run_criterion(id, &opts)).collect() }
            };
            println!("{report}");
            if let Some(p) = json {
                serde_json::to_writer_pretty(std::fs::File::create(&p)?, &report)?;
            }
            Ok(if report.passed() { 0 } else { 1 })
        }
        Cmd::Plot { csv, panels, out, title } => {
            let sources = csv.split(',').map(|p| read_csv_file(p.trim().as_ref())).collect::<Result<Vec<_>, _>>()?;
            let panels = parse_panels(&panels)?;
            match render(&sources, &panels, &title) {
                Some(svg) => {
                    std::fs::write(&out, svg)?;
                    info!("wrote {}", out.display());
                    Ok(0)
                }
                None => Ok(1),
            }
        }
        Cmd::Presets => {
            for (name, desc) in PRESETS {
                println!("{name:<12} {desc}");
            }
            Ok(0)
        }
    }
}
