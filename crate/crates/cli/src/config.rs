//! Run configuration: a built-in name or JSON file, plus flag overrides,
//! resolved into one validated [`ScenarioDef`].

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use dqm_core::scenarios::{builtin, Scenario, ScenarioDef};
use dqm_core::{ControlStrategy, ProbeSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Output file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Subcommand a configuration is resolved for; decides what `T` overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Qfi,
    Estimate,
    ControlExport,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Qfi => "qfi",
            Command::Estimate => "estimate",
            Command::ControlExport => "control-export",
        }
    }
}

/// Overrides that apply on top of a scenario definition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub t: Option<Vec<f64>>,
    pub m: Option<usize>,
    pub seed: Option<u64>,
    pub shots: Option<u64>,
    pub rounds: Option<usize>,
    pub reps: Option<usize>,
    pub probe: Option<String>,
    pub control: Option<String>,
}

/// Contents of a `--config` file. Override keys use the flag names.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// Built-in scenario to start from.
    pub scenario: Option<String>,
    /// Complete scenario definition; excludes `scenario`.
    pub definition: Option<ScenarioDef>,
    #[serde(rename = "T")]
    pub t: Option<Vec<f64>>,
    #[serde(rename = "M")]
    pub m: Option<usize>,
    pub seed: Option<u64>,
    pub shots: Option<u64>,
    pub rounds: Option<usize>,
    pub reps: Option<usize>,
    pub probe: Option<String>,
    pub control: Option<String>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    fn overrides(&self) -> Overrides {
        Overrides {
            t: self.t.clone(),
            m: self.m,
            seed: self.seed,
            shots: self.shots,
            rounds: self.rounds,
            reps: self.reps,
            probe: self.probe.clone(),
            control: self.control.clone(),
        }
    }
}

/// The part of a resolved run that the manifest records. Feeding it back
/// through `--config` reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub definition: ScenarioDef,
    pub format: Format,
}

/// A validated run.
#[derive(Debug)]
pub struct RunConfig {
    pub command: Command,
    pub scenario: Scenario,
    pub format: Format,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn resolved(&self) -> ResolvedConfig {
        ResolvedConfig { definition: self.scenario.def().clone(), format: self.format }
    }
}

/// Everything the command line can say about a run.
#[derive(Debug, Clone, Default)]
pub struct Sources {
    pub name: Option<String>,
    pub config: Option<PathBuf>,
    pub overrides: Overrides,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
}

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DQM_OUT_DIR";

/// Reads a config file. A run manifest is accepted too: its `config`
/// member is used.
pub fn read_config_file(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let bad = |e: serde_json::Error| CliError::Validation(format!("config {}: {e}", path.display()));
    let value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
    if value.get("tool").is_some() {
        let inner = value
            .get("config")
            .cloned()
            .ok_or_else(|| CliError::Validation(format!("manifest {} has no config member", path.display())))?;
        return serde_json::from_value(inner).map_err(bad);
    }
    // parse the text again so schema errors carry line and column
    serde_json::from_str(&text).map_err(bad)
}

fn merge(base: Overrides, top: Overrides) -> Overrides {
    Overrides {
        t: top.t.or(base.t),
        m: top.m.or(base.m),
        seed: top.seed.or(base.seed),
        shots: top.shots.or(base.shots),
        rounds: top.rounds.or(base.rounds),
        reps: top.reps.or(base.reps),
        probe: top.probe.or(base.probe),
        control: top.control.or(base.control),
    }
}

/// Applies overrides to a definition. `T` replaces the sweep for `qfi` and
/// `control-export`, and the estimation times for `estimate`.
pub fn apply_overrides(def: &mut ScenarioDef, o: &Overrides, command: Command) -> Result<(), CliError> {
    if let Some(t) = &o.t {
        match command {
            Command::Estimate => def.estimation.times = t.clone(),
            _ => def.sweep = t.clone(),
        }
    }
    if let Some(m) = o.m {
        def.base_steps = m;
    }
    if let Some(seed) = o.seed {
        def.estimation.seed = seed;
    }
    if let Some(shots) = o.shots {
        def.estimation.shots = shots;
    }
    if let Some(rounds) = o.rounds {
        def.estimation.rounds = rounds;
    }
    if let Some(reps) = o.reps {
        def.estimation.reps = reps;
    }
    if let Some(p) = &o.probe {
        def.probe = p.parse::<ProbeSpec>().map_err(|e| CliError::Validation(format!("probe: {e}")))?;
    }
    if let Some(c) = &o.control {
        def.control = c.parse::<ControlStrategy>().map_err(|e| CliError::Validation(format!("control: {e}")))?;
    }
    Ok(())
}

/// Resolves and validates a run. Flags win over the config file, which wins
/// over the scenario's own values.
pub fn resolve(command: Command, src: Sources, env_out: Option<PathBuf>) -> Result<RunConfig, CliError> {
    let file = match &src.config {
        Some(path) => read_config_file(path)?,
        None => ConfigFile::default(),
    };
    let name = match (&src.name, &file.scenario) {
        (Some(flag), Some(cfg)) if flag != cfg => {
            return Err(CliError::Validation(format!(
                "scenario: '{flag}' on the command line conflicts with '{cfg}' in the config file"
            )))
        }
        (Some(n), _) | (None, Some(n)) => Some(n.clone()),
        (None, None) => None,
    };
    let overrides = merge(file.overrides(), src.overrides);
    let mut def = match (name, file.definition) {
        (Some(_), Some(_)) => {
            return Err(CliError::Validation("scenario: give either a built-in name or a definition, not both".into()))
        }
        (Some(n), None) => builtin(&n).map_err(CliError::from)?,
        (None, Some(d)) => d,
        (None, None) => {
            return Err(CliError::Validation(
                "scenario: no scenario given (name one, or pass --config with a definition)".into(),
            ))
        }
    };
    apply_overrides(&mut def, &overrides, command)?;
    let scenario = Scenario::new(def).map_err(CliError::from)?;
    let format = src.format.or(file.format).unwrap_or_default();
    let out_dir = src.out.or(file.out).or(env_out).unwrap_or_else(|| PathBuf::from("."));
    Ok(RunConfig { command, scenario, format, out_dir })
}
