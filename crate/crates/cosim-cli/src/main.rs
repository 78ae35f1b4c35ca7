//! Command-line front end: run, sweep, validate and report.
//!
//! Exit codes: 0 on success (a scientifically unstable verdict is still a
//! successful run), 1 for usage and configuration errors, 2 for runtime
//! failures. The default output directory comes from `--out`, then the
//! `COSIM_OUT_DIR` environment variable, then the working directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cosim::harness::{
    emit_csv, emit_metrics_json, emit_report, load_metrics_json, load_scenario_with_seed,
    render_report, render_sweep_csv, run_experiment_with, run_sweep, HarnessError, Scenario,
    StabilityVerdict, SweepAxis,
};
use cosim::kernel::SyncStrategy;

#[derive(Parser)]
#[command(name = "cosim", version, about = "Deterministic power/ICT co-simulation with a virtual PHIL loop")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario; writes <name>.trace.csv, <name>.metrics.json and
    /// <name>.report.txt into the output directory.
    Run {
        scenario: PathBuf,
        /// Output directory (default: $COSIM_OUT_DIR, then `.`)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario seed (embedded before link seeds derive)
        #[arg(long)]
        seed: Option<u64>,
        /// Override the synchronization strategy: time-stepped,
        /// master-slave, global-event-driven or model-exchange
        #[arg(long)]
        strategy: Option<String>,
        /// Disable wall-clock pacing (reproducible output bytes)
        #[arg(long)]
        no_pacing: bool,
    },
    /// Sweep scenario parameters; repeat --axis/--values per dimension.
    Sweep {
        scenario: PathBuf,
        /// Dotted path into the scenario document, e.g.
        /// power.hut_side.elements.Rh.ohms
        #[arg(long, required = true)]
        axis: Vec<String>,
        /// Comma-separated value list, one --values per --axis
        #[arg(long, required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a scenario, reporting every problem found.
    Validate { scenario: PathBuf },
    /// Render a metrics JSON file as a human-readable report.
    Report { metrics: PathBuf },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("COSIM_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn override_strategy(scenario: &mut Scenario, name: &str) -> Result<(), String> {
    let master = scenario
        .master
        .clone()
        .or_else(|| scenario.network.as_ref().map(|_| "net".to_string()));
    scenario.strategy = match name {
        "time-stepped" => SyncStrategy::TimeStepped { sync_interval: scenario.dt },
        "global-event-driven" => SyncStrategy::GlobalEventDriven,
        "master-slave" => SyncStrategy::MasterSlave {
            master: master.ok_or("master-slave needs a network federate or sync.master")?,
        },
        "model-exchange" => SyncStrategy::ModelExchange {
            host: master.ok_or("model-exchange needs a network federate or sync.master")?,
        },
        other => return Err(format!("unknown strategy `{other}`")),
    };
    Ok(())
}

fn run(cli: Cli) -> Result<(), (i32, String)> {
    let config_err = |message: String| (1, message);
    let harness_err = |e: HarnessError| (e.exit_code(), e.to_string());
    match cli.command {
        Command::Run { scenario, out, seed, strategy, no_pacing } => {
            let mut scenario = load_scenario_with_seed(&scenario, seed).map_err(harness_err)?;
            if let Some(name) = &strategy {
                override_strategy(&mut scenario, name).map_err(config_err)?;
            }
            let (trace, metrics) =
                run_experiment_with(&scenario, !no_pacing).map_err(harness_err)?;
            let dir = out_dir(out);
            std::fs::create_dir_all(&dir)
                .map_err(|e| (2, format!("{}: {e}", dir.display())))?;
            let base = dir.join(&metrics.scenario);
            let trace_path = base.with_extension("trace.csv");
            let metrics_path = base.with_extension("metrics.json");
            let report_path = base.with_extension("report.txt");
            emit_csv(&trace, &trace_path).map_err(harness_err)?;
            emit_metrics_json(&metrics, &metrics_path).map_err(harness_err)?;
            emit_report(&metrics, &report_path).map_err(harness_err)?;
            print!("{}", render_report(&metrics));
            if let StabilityVerdict::Unstable { onset_seconds } = metrics.stability {
                println!("note: run went unstable at {onset_seconds} s; trace truncated there");
            }
            println!(
                "wrote {} / {} / {}",
                trace_path.display(),
                metrics_path.display(),
                report_path.display()
            );
            Ok(())
        }
        Command::Sweep { scenario, axis, values, out } => {
            if axis.len() != values.len() {
                return Err(config_err(format!(
                    "got {} --axis but {} --values; provide one value list per axis",
                    axis.len(),
                    values.len()
                )));
            }
            let axes: Vec<SweepAxis> = axis
                .into_iter()
                .zip(values)
                .map(|(path, list)| SweepAxis {
                    path,
                    values: list
                        .split(',')
                        .map(|v| v.trim().to_string())
                        .filter(|v| !v.is_empty())
                        .collect(),
                })
                .collect();
            let text = std::fs::read_to_string(&scenario)
                .map_err(|e| (1, format!("{}: {e}", scenario.display())))?;
            let cells = run_sweep(&text, &scenario, &axes).map_err(harness_err)?;
            let csv = render_sweep_csv(&axes, &cells);
            let dir = out_dir(out);
            std::fs::create_dir_all(&dir)
                .map_err(|e| (2, format!("{}: {e}", dir.display())))?;
            let stem = scenario
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "sweep".into());
            let path = dir.join(format!("{stem}.sweep.csv"));
            std::fs::write(&path, &csv).map_err(|e| (2, format!("{}: {e}", path.display())))?;
            print!("{csv}");
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Validate { scenario } => {
            let loaded = load_scenario_with_seed(&scenario, None).map_err(harness_err)?;
            println!(
                "ok: scenario `{}` (seed {}, duration {}, sha256 {})",
                loaded.name, loaded.seed, loaded.duration, loaded.sha256
            );
            Ok(())
        }
        Command::Report { metrics } => {
            let metrics = load_metrics_json(&metrics).map_err(harness_err)?;
            print!("{}", render_report(&metrics));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code as u8)
        }
    }
}
