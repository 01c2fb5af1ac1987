use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use crossflow::harness::{run_suite, suite_configs, write_suite, ControllerKind, ExperimentConfig};
use crossflow::metrics::{summarize, write_outputs};
use crossflow::network::generate_grid;
use crossflow::run_experiment;

#[derive(Parser)]
#[command(name = "crossflow", version, about = "Traffic signal control simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write per-slot and summary CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// qlearn, fixed, dynamic or marl
        #[arg(long)]
        controller: Option<String>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Run every controller of the suite on the same network and demand.
    Suite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<String>,
    },
    /// Write a rows × cols grid network as JSON.
    GenGrid {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 10)]
        travel_slots: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

fn controller(name: &str) -> Result<ControllerKind> {
    Ok(match name {
        "qlearn" => ControllerKind::Qlearn,
        "fixed" => ControllerKind::Fixed,
        "dynamic" => ControllerKind::Dynamic,
        "marl" => ControllerKind::Marl,
        _ => bail!("unknown controller {name:?} (expected qlearn, fixed, dynamic or marl)"),
    })
}

fn prefix(cli: Option<String>, cfg: &ExperimentConfig) -> String {
    cli.or_else(|| cfg.output.clone()).unwrap_or_else(|| "crossflow".to_string())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run {
            config,
            seed,
            controller: ctl,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(c) = ctl {
                cfg.controller = controller(&c)?;
            }
            let prefix = prefix(out, &cfg);
            let log = run_experiment(&cfg)?;
            for path in write_outputs(std::slice::from_ref(&log), &prefix, false)? {
                println!("wrote {}", path.display());
            }
            let s = summarize(&log)?;
            println!(
                "{}: mean veh wait {:.3}, mean ped wait {:.3}, mean travel {:.3}, trips {}",
                s.controller, s.mean_veh_wait, s.mean_ped_wait, s.mean_travel, s.completed_trips
            );
        }
        Cmd::Suite { config, out } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let prefix = prefix(out, &cfg);
            let result = run_suite(&suite_configs(&cfg))?;
            for path in write_suite(&result, &prefix)? {
                println!("wrote {}", path.display());
            }
            for s in &result.rows {
                println!(
                    "{:>10}  veh wait {:>8.3}  ped wait {:>8.3}  queue {:>8.3}",
                    s.controller,
                    s.mean_veh_wait,
                    s.mean_ped_wait,
                    s.mean_combined_queue()
                );
            }
        }
        Cmd::GenGrid {
            rows,
            cols,
            travel_slots,
            out,
        } => {
            if rows == 0 || cols == 0 || travel_slots == 0 {
                bail!("rows, cols and travel_slots must be positive");
            }
            let net = generate_grid(rows, cols, travel_slots);
            std::fs::write(&out, net.to_json()).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
