//! Report writers. Every file of a run is rendered in memory first and then
//! written in one pass; if any write fails, everything written so far is
//! removed.

use std::fs;
use std::path::{Path, PathBuf};

use dqm_core::format::g12;
use serde_json::Value;

use crate::CliError;

/// JSON number carrying the same 12 significant digits as the CSV output;
/// non-finite values become `null`.
pub fn num(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    let rounded: f64 = g12(x).parse().expect("g12 output parses as f64");
    serde_json::Number::from_f64(rounded).map(Value::Number).unwrap_or(Value::Null)
}

/// Replaces every float in `v` with its 12-digit rendering.
pub fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => num(n.as_f64().unwrap_or(f64::NAN)),
        Value::Array(a) => Value::Array(a.into_iter().map(round_floats).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_floats(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with a trailing newline.
pub fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    s
}

/// Builds a CSV document from a header and string rows.
pub fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let sim = |e: csv::Error| CliError::Simulation(format!("rendering CSV: {e}"));
    w.write_record(header).map_err(sim)?;
    for row in rows {
        w.write_record(&row).map_err(sim)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Simulation(format!("rendering CSV: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::Simulation(format!("rendering CSV: {e}")))
}

/// Named file contents awaiting a write.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, String)>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Writes every file into `dir`, creating it if needed. On failure the
    /// files already written are deleted and the error is returned.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Simulation(format!("cannot create output directory {}: {e}", dir.display())))?;
        let mut written: Vec<PathBuf> = Vec::new();
        for (name, contents) in &self.files {
            let path = dir.join(name);
            if let Err(e) = fs::write(&path, contents) {
                let _ = fs::remove_file(&path);
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                return Err(CliError::Simulation(format!("cannot write {}: {e}", path.display())));
            }
            written.push(path);
        }
        Ok(written)
    }
}
