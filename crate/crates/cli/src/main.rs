//! `dqm`: sweep, estimate and export controls for distributed sensing
//! scenarios.
//!
//! Exit codes: 0 when every requested file was written, 1 for invalid
//! input, 2 when a simulation or write fails.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dqm_core::format::g12;
use dqm_core::scenarios::{builtin, export_protocol, run_estimation, run_scenario, BUILTIN_NAMES};
use dqm_core::{ControlProtocol, Execution};
use serde_json::{json, Value};

use config::{resolve, Command, Format, Overrides, RunConfig, Sources, OUT_DIR_ENV};
use output::{csv_text, json_text, num, round_floats, Artifacts};

/// Failure classes, mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Simulation(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Simulation(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Simulation(m) => write!(f, "simulation failed: {m}"),
        }
    }
}

impl From<dqm_core::Error> for CliError {
    fn from(e: dqm_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Simulation(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(name = "dqm", version, about = "Distributed quantum sensing workbench")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sweep sensing times and write the QFI table.
    Qfi(RunArgs),
    /// Run adaptive estimation and compare with the Cramér–Rao bound.
    Estimate(RunArgs),
    /// Write the synthesized control protocol for each sensing time.
    ControlExport(RunArgs),
    /// List the built-in scenarios.
    ListScenarios {
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Built-in scenario name (same as --scenario).
    name: Option<String>,
    /// Built-in scenario name.
    #[arg(long)]
    scenario: Option<String>,
    /// JSON config file or a previous run's manifest.json.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated sensing times.
    #[arg(long = "T", value_delimiter = ',', allow_negative_numbers = true)]
    t: Option<Vec<f64>>,
    /// Time steps per unit time (at least this many steps for T < 1).
    #[arg(long = "M")]
    m: Option<usize>,
    /// Master seed for shot sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Total shots per estimation run.
    #[arg(long)]
    shots: Option<u64>,
    /// Entangled estimation rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Independent estimation repetitions.
    #[arg(long)]
    reps: Option<usize>,
    /// ghz, bell-singlet, product or optimal.
    #[arg(long)]
    probe: Option<String>,
    /// alignment, cancel, pi-pulse or none.
    #[arg(long)]
    control: Option<String>,
    /// Output directory (default: $DQM_OUT_DIR, else the current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl RunArgs {
    fn sources(self) -> Result<Sources, CliError> {
        let name = match (self.name, self.scenario) {
            (Some(a), Some(b)) if a != b => {
                return Err(CliError::Validation(format!("scenario: '{a}' and --scenario '{b}' disagree")))
            }
            (a, b) => a.or(b),
        };
        Ok(Sources {
            name,
            config: self.config,
            overrides: Overrides {
                t: self.t,
                m: self.m,
                seed: self.seed,
                shots: self.shots,
                rounds: self.rounds,
                reps: self.reps,
                probe: self.probe,
                control: self.control,
            },
            format: self.format,
            out: self.out,
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dqm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (command, args) = match cli.command {
        Cmd::ListScenarios { format } => return list_scenarios(format.unwrap_or_default()),
        Cmd::Qfi(a) => (Command::Qfi, a),
        Cmd::Estimate(a) => (Command::Estimate, a),
        Cmd::ControlExport(a) => (Command::ControlExport, a),
    };
    let env_out = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    let run = resolve(command, args.sources()?, env_out)?;
    let exec = Execution::available();
    let (mut artifacts, summary, stdout) = match command {
        Command::Qfi => cmd_qfi(&run, exec)?,
        Command::Estimate => cmd_estimate(&run, exec)?,
        Command::ControlExport => cmd_control_export(&run)?,
    };
    let mut outputs = artifacts.names();
    outputs.push("manifest.json".into());
    let manifest = json!({
        "tool": "dqm",
        "version": env!("CARGO_PKG_VERSION"),
        "command": run.command.name(),
        "config": serde_json::to_value(run.resolved()).map_err(|e| CliError::Simulation(e.to_string()))?,
        "seed": run.scenario.def().estimation.seed,
        "outputs": outputs,
        "summary": round_floats(summary),
    });
    artifacts.add("manifest.json", json_text(&manifest));
    for path in artifacts.write_all(&run.out_dir)? {
        eprintln!("wrote {}", path.display());
    }
    print!("{stdout}");
    Ok(())
}

type CommandOutput = (Artifacts, Value, String);

fn cmd_qfi(run: &RunConfig, exec: Execution) -> Result<CommandOutput, CliError> {
    let report = run_scenario(&run.scenario, exec)?;
    let slope = report.loglog_slope();
    let max_ratio = report
        .rows
        .iter()
        .filter(|r| r.bound > 0.0)
        .map(|r| r.qfi_controlled / r.bound)
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
    let header = ["T", "qfi_controlled", "qfi_uncontrolled", "bound", "cfi", "precision_bound"];
    let table = csv_text(
        &header,
        report.rows.iter().map(|r| {
            [r.t, r.qfi_controlled, r.qfi_uncontrolled, r.bound, r.cfi, r.precision_bound]
                .iter()
                .map(|v| g12(*v))
                .collect()
        }),
    )?;
    let mut artifacts = Artifacts::default();
    match run.format {
        Format::Csv => artifacts.add("qfi.csv", table.clone()),
        Format::Json => {
            let rows: Vec<Value> = report
                .rows
                .iter()
                .map(|r| {
                    json!({
                        "T": num(r.t),
                        "steps": r.steps,
                        "qfi_controlled": num(r.qfi_controlled),
                        "qfi_uncontrolled": num(r.qfi_uncontrolled),
                        "bound": num(r.bound),
                        "cfi": num(r.cfi),
                        "precision_bound": num(r.precision_bound),
                    })
                })
                .collect();
            artifacts.add("qfi.json", json_text(&json!({ "scenario": report.scenario, "rows": rows })));
        }
    }
    let summary = json!({
        "scenario": report.scenario,
        "rows": report.rows.len(),
        "steps": report.rows.iter().map(|r| r.steps).collect::<Vec<_>>(),
        "loglog_slope": slope.map_or(Value::Null, num),
        "max_qfi_to_bound": max_ratio.map_or(Value::Null, num),
    });
    Ok((artifacts, summary, table))
}

fn joined(x: &[f64]) -> String {
    x.iter().map(|v| g12(*v)).collect::<Vec<_>>().join(";")
}

fn cmd_estimate(run: &RunConfig, exec: Execution) -> Result<CommandOutput, CliError> {
    let reports = run_estimation(&run.scenario, exec)?;
    let trace_header = ["T", "rep", "round", "stage", "protocol", "shots", "x_hat", "theta_hat", "running_variance"];
    let summary_header =
        ["T", "steps", "reps", "shots", "theta_true", "theta_hat", "mu_variance", "crb", "ratio_to_crb"];
    let trace_rows = reports.iter().flat_map(|r| {
        r.trace.iter().map(move |(rep, row)| {
            vec![
                g12(r.t),
                rep.to_string(),
                row.round.to_string(),
                row.stage.clone(),
                row.protocol.to_string(),
                row.shots.to_string(),
                joined(&row.x_hat),
                g12(row.theta_hat),
                g12(row.running_variance),
            ]
        })
    });
    let summary_rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                g12(r.t),
                r.steps.to_string(),
                r.reps.to_string(),
                r.shots.to_string(),
                g12(r.theta_true),
                g12(r.theta_hat),
                g12(r.mu_variance),
                g12(r.crb),
                g12(r.ratio_to_crb),
            ]
        })
        .collect();
    let summary_csv = csv_text(&summary_header, summary_rows)?;
    let summary_json: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({
                "T": num(r.t),
                "steps": r.steps,
                "reps": r.reps,
                "shots": r.shots,
                "theta_true": num(r.theta_true),
                "theta_hat": num(r.theta_hat),
                "mu_variance": num(r.mu_variance),
                "crb": num(r.crb),
                "ratio_to_crb": num(r.ratio_to_crb),
            })
        })
        .collect();
    let mut artifacts = Artifacts::default();
    match run.format {
        Format::Csv => {
            artifacts.add("estimate_trace.csv", csv_text(&trace_header, trace_rows)?);
            artifacts.add("estimate_summary.csv", summary_csv.clone());
        }
        Format::Json => {
            let trace: Vec<Value> = reports
                .iter()
                .flat_map(|r| {
                    r.trace.iter().map(move |(rep, row)| {
                        json!({
                            "T": num(r.t),
                            "rep": rep,
                            "round": row.round,
                            "stage": row.stage,
                            "protocol": row.protocol.as_str(),
                            "shots": row.shots,
                            "x_hat": row.x_hat.iter().map(|v| num(*v)).collect::<Vec<_>>(),
                            "theta_hat": num(row.theta_hat),
                            "running_variance": num(row.running_variance),
                        })
                    })
                })
                .collect();
            artifacts.add("estimate.json", json_text(&json!({ "summary": summary_json, "trace": trace })));
        }
    }
    Ok((artifacts, json!({ "scenario": run.scenario.name(), "results": summary_json }), summary_csv))
}

fn protocol_rows(p: &ControlProtocol) -> Vec<(i64, f64, usize, [f64; 3])> {
    let mut rows = Vec::new();
    if let Some(prep) = p.preparation() {
        for (q, a) in prep.iter().enumerate().filter(|(_, a)| a.max_abs() > 0.0) {
            rows.push((-1, 0.0, q, a.to_array()));
        }
    }
    for m in 0..p.grid().steps() {
        for (q, c) in p.step(m).iter().enumerate().filter(|(_, c)| c.max_abs() > 0.0) {
            rows.push((m as i64, p.grid().midpoint(m), q, c.to_array()));
        }
    }
    rows
}

fn cmd_control_export(run: &RunConfig) -> Result<CommandOutput, CliError> {
    let mut artifacts = Artifacts::default();
    let mut summary = Vec::new();
    let mut stdout = String::new();
    for &t in &run.scenario.def().sweep {
        let export = export_protocol(&run.scenario, t)?;
        let p = &export.protocol;
        let rows = protocol_rows(p);
        let stem = format!("control_T{}", g12(t));
        match run.format {
            Format::Csv => {
                let mut buf = Vec::new();
                p.write_csv(&mut buf)?;
                let text = String::from_utf8(buf).map_err(|e| CliError::Simulation(e.to_string()))?;
                artifacts.add(format!("{stem}.csv"), text);
            }
            Format::Json => {
                let table: Vec<Value> = rows
                    .iter()
                    .map(|(step, time, q, c)| {
                        json!({ "step": step, "time": num(*time), "qubit": q, "cx": num(c[0]), "cy": num(c[1]), "cz": num(c[2]) })
                    })
                    .collect();
                artifacts.add(format!("{stem}.json"), json_text(&json!({ "T": num(t), "rows": table })));
            }
        }
        stdout.push_str(&format!(
            "T={} strategy={} rows={} max_amplitude={} alignment_residual={} factorization_residual={}\n",
            g12(t),
            p.strategy(),
            rows.len(),
            g12(p.max_amplitude()),
            g12(export.residual.max_norm),
            g12(export.factorization_residual),
        ));
        summary.push(json!({
            "T": t,
            "steps": p.grid().steps(),
            "strategy": p.strategy().as_str(),
            "rows": rows.len(),
            "max_amplitude": p.max_amplitude(),
            "alignment_residual": export.residual.max_norm,
            "factorization_residual": export.factorization_residual,
        }));
    }
    Ok((artifacts, json!({ "scenario": run.scenario.name(), "protocols": summary }), stdout))
}

fn list_scenarios(format: Format) -> Result<(), CliError> {
    let defs = BUILTIN_NAMES.iter().map(|n| builtin(n)).collect::<Result<Vec<_>, _>>()?;
    match format {
        Format::Csv => {
            let rows = defs.iter().map(|d| {
                vec![
                    d.name.clone(),
                    d.nodes.iter().map(|n| n.qubits).sum::<usize>().to_string(),
                    d.probe.name().to_string(),
                    d.control.to_string(),
                    d.description.clone(),
                ]
            });
            print!("{}", csv_text(&["name", "qubits", "probe", "control", "description"], rows)?);
        }
        Format::Json => {
            let v = serde_json::to_value(&defs).map_err(|e| CliError::Simulation(e.to_string()))?;
            print!("{}", json_text(&v));
        }
    }
    Ok(())
}
