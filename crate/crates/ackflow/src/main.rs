//! Command-line front end: load a scenario, run the selected models, write
//! CSV traces.
//!
//! Exit codes: 0 on success, 1 when the scenario or arguments fail
//! validation, 2 when a simulation fails at runtime.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use ackflow::runner::{resolve_models, run_scenario, RunError};
use ackflow::scenario::load_scenario;

/// Fluid-flow simulator for window-based congestion control.
#[derive(Parser)]
#[command(name = "ackflow", version, about)]
struct Cli {
    /// Built-in scenario name (scenario1..scenario8, squarewave) or path to
    /// a scenario TOML file.
    scenario: String,
    /// Models to run: flow, pseudo_queue, ratio, joint, static, oracle, a
    /// comma list, or all. Defaults to the scenario's run.model.
    #[arg(long)]
    model: Option<String>,
    /// Override the scenario's step size in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Override the scenario's end time in seconds.
    #[arg(long)]
    t_end: Option<f64>,
    /// Output directory. Overrides the ACKFLOW_OUT_DIR environment variable;
    /// the default is ./out.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.kind() == ErrorKind::DisplayHelp || e.kind() == ErrorKind::DisplayVersion => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                RunError::Scenario(_) => ExitCode::from(1),
                RunError::Solver(_) | RunError::Packet(_) | RunError::Io { .. } => {
                    ExitCode::from(2)
                }
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    let mut sc = load_scenario(&cli.scenario)?;
    if let Some(dt) = cli.dt {
        sc.run.dt = dt;
    }
    if let Some(t_end) = cli.t_end {
        sc.run.t_end = t_end;
    }
    sc.validate()?;
    let selection = cli.model.unwrap_or_else(|| sc.run.model.clone());
    let models = resolve_models(&sc, &selection)?;
    let out_dir = cli
        .out
        .or_else(|| std::env::var_os("ACKFLOW_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let outcome = run_scenario(&sc, &models, &out_dir)?;
    for (model, dir) in &outcome.model_dirs {
        println!("{model}: {}", dir.display());
    }
    if let Some(summary) = &outcome.summary_path {
        println!("summary: {}", summary.display());
    }
    Ok(())
}
